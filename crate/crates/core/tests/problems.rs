use fracfeedback::fem::discounted_l2_distance;
use fracfeedback::flow::{FnCost, RunningCost};
use fracfeedback::hjb::Noise;
use fracfeedback::pipeline::{physical_states, run, Controller};
use fracfeedback::problems::{evaluate_cost_functional, Problem, TestCase, TestName};
use fracfeedback::fem::Scheme;
use nalgebra::DVector;
use proptest::prelude::*;

#[test]
fn default_parameters() {
    let t1 = TestCase::test1(63);
    assert_eq!(t1.name, TestName::Test1);
    assert_eq!((t1.s, t1.alpha, t1.gamma, t1.lambda), (0.75, 1.0, 0.01, 0.5));
    assert_eq!((t1.u_lo, t1.u_hi, t1.t0_switch), (0.0, 1.0, Some(3.0)));
    assert_eq!(t1.grid_control_set().len(), 7);
    assert_eq!((t1.dt_bar, t1.t_grid), (0.0125, 4.0));
    assert_eq!(t1.vi_control_set().len(), 21);
    assert_eq!(t1.dt_vi, 0.01);
    assert_eq!(t1.thetas().len(), 11);
    assert!((t1.thetas()[10] - 0.3).abs() < 1e-12);
    assert_eq!(t1.synth_control_set().len(), 1681);
    assert_eq!(t1.t_sim, 4.0);
    assert_eq!(TestCase::test1(127).d, 127);

    let t2 = TestCase::test2();
    assert_eq!((t2.d, t2.s, t2.gamma, t2.lambda), (63, 0.75, 1e-6, 0.5));
    assert_eq!(t2.target, Some([-0.5, 0.5]));
    assert_eq!((t2.u_lo, t2.u_hi), (-0.5, 0.0));
    assert_eq!(t2.grid_control_set().len(), 25);
    assert_eq!(t2.vi_control_set().len(), 25);
    assert_eq!((t2.dt_bar, t2.t_grid, t2.dt_vi), (0.025, 6.0, 0.01));
    assert_eq!(t2.thetas(), vec![0.01]);
    assert_eq!(t2.synth_control_set().len(), 1681);
    assert_eq!((t2.dt_sim, t2.t_sim), (0.025, 10.0));

    let t3 = TestCase::test3();
    assert_eq!((t3.d, t3.s, t3.alpha, t3.gamma, t3.lambda), (63, 0.75, 0.01, 0.01, 0.5));
    assert_eq!((t3.u_lo, t3.u_hi), (-0.5, 0.0));
    assert_eq!(t3.grid_control_set().len(), 11);
    assert_eq!((t3.dt_bar, t3.t_grid, t3.dt_vi), (0.025, 6.0, 0.01));
    assert_eq!(t3.vi_control_set().len(), 21);
    assert_eq!(t3.thetas().len(), 5);
    assert_eq!(t3.synth_control_set().len(), 81);
    assert_eq!(t3.dt_sim, 0.025);

    for case in [t1, t2, t3] {
        assert_eq!(case.scheme, Scheme::ImexEuler);
        assert!(case.dt_vi * case.lambda <= 1.0);
        case.validate().unwrap();
    }
}

#[test]
fn manufactured_initial_state() {
    let problem = Problem::setup(&TestCase::test1(63)).unwrap();
    let mesh = &problem.system.mesh;
    // q(ξ) = c (1-ξ²)^{3/4} with unit L² norm, -Δ^{3/4} q = √(3/2) on (-1,1)
    let c = (8.0 / (3.0 * std::f64::consts::PI)).sqrt();
    let b = 1.5f64.sqrt();
    let (gamma, lambda, kappa, dkappa) = (0.01, 0.5, 9.0, -6.0);
    for i in 0..mesh.dofs() {
        let xi = mesh.node(i);
        let q = c * (1.0 - xi * xi).powf(0.75);
        let y_d = q - gamma * dkappa * q + gamma * kappa * b + lambda * gamma * kappa * q;
        assert!((problem.x0[i] - (q - y_d)).abs() < 1e-12, "node {i}");
    }
    let tr = problem.transform.as_ref().unwrap();
    let back = tr.untransform(&problem.x0, 0.0);
    for i in 0..mesh.dofs() {
        let xi = mesh.node(i);
        assert!((back[i] - c * (1.0 - xi * xi).powf(0.75)).abs() < 1e-12);
    }
}

#[test]
fn target_cost_ignores_the_outside() {
    let problem = Problem::setup(&TestCase::test2()).unwrap();
    let mesh = &problem.system.mesh;
    let h = mesh.h();
    let outside = DVector::from_fn(mesh.dofs(), |i, _| {
        let xi = mesh.node(i);
        if xi.abs() > 0.5 + h { (i as f64).sin() + 2.0 } else { 0.0 }
    });
    assert!(outside.norm() > 1.0);
    assert_eq!(problem.cost.eval(&outside, &[0.0, 0.0]), 0.0);
    let inside = DVector::from_fn(mesh.dofs(), |i, _| if mesh.node(i).abs() < 0.25 { 1.0 } else { 0.0 });
    assert!(problem.cost.eval(&inside, &[0.0, 0.0]) > 0.0);
    // control weight γ/4 per component, halved
    let effort = problem.cost.eval(&DVector::zeros(mesh.dofs()), &[-0.5, -0.5]);
    assert!((effort - 0.5 * 1e-6 * 0.25 * 0.5).abs() < 1e-18);
}

#[test]
fn source_vanishes_at_the_start() {
    let problem = Problem::setup(&TestCase::test2()).unwrap();
    let flow = problem.dynamics(0.025).unwrap();
    assert_eq!(problem.x0, DVector::zeros(problem.system.dofs()));
    assert!(flow.forcing().eval(0.0, 0.025, problem.system.dofs()).iter().all(|v| *v == 0.0));
    let next = flow.flow_step(&problem.x0, &[0.0, 0.0], 0.0).unwrap();
    assert!(next.iter().all(|v| *v == 0.0));
    let later = flow.flow_step(&problem.x0, &[0.0, 0.0], 1.0).unwrap();
    assert!(later.iter().any(|v| *v != 0.0));
}

#[test]
fn reaction_term() {
    let problem = Problem::setup(&TestCase::test3()).unwrap();
    let f = problem.dynamics(0.025).unwrap().nonlinearity();
    let v = f.apply(&DVector::from_vec(vec![0.0, 1.0, 0.5, 0.9, 1.5, -0.5])).unwrap();
    assert_eq!((v[0], v[1]), (0.0, 0.0));
    assert!(v[2] > 0.0 && v[3] > 0.0);
    assert!(v[4] < 0.0 && v[5] > 0.0);
    assert!((v[2] - 0.125).abs() < 1e-15);
    // the same initial datum as the manufactured problem
    let t1 = Problem::setup(&TestCase::test1(63)).unwrap();
    let q = t1.transform.as_ref().unwrap().untransform(&t1.x0, 0.0);
    assert!((&problem.x0 - q).amax() < 1e-12);
}

#[test]
fn cost_functional_examples() {
    let zero = FnCost(|_: &DVector<f64>, _: &[f64]| 0.0);
    let xs = vec![DVector::from_element(3, 1.0); 10];
    let us = vec![vec![0.3]; 10];
    let j = evaluate_cost_functional(&xs, &us, &zero, 0.5, 0.1).unwrap();
    assert_eq!(j.len(), 11);
    assert!(j.iter().all(|v| *v == 0.0));

    let quad = FnCost(|x: &DVector<f64>, u: &[f64]| x.norm_squared() + u[0]);
    let j = evaluate_cost_functional(&xs, &us, &quad, 0.5, 0.1).unwrap();
    let direct: f64 = (0..10).map(|i| 0.1 * (-0.05 * i as f64).exp() * 3.3).sum();
    assert!((j[10] - direct).abs() < 1e-13);
    assert!(j.windows(2).all(|w| w[1] > w[0]));
}

/// Distance between the exact optimum and the replay of the exact control.
fn replay_error(problem: &Problem, dt: f64) -> f64 {
    let pair = problem.analytic.unwrap();
    let mesh = &problem.system.mesh;
    let sim = run(problem, &Controller::OpenLoop, dt, &problem.x0, problem.case.t_sim, Noise::none()).unwrap();
    let n = sim.controls.len();
    let replay = &physical_states(problem, &sim)[..n];
    let exact: Vec<DVector<f64>> =
        sim.times[..n].iter().map(|&t| mesh.interpolate(|xi| pair.y_star(xi, t))).collect();
    discounted_l2_distance(replay, &exact, &problem.system.mass, problem.case.lambda, dt).unwrap()
}

#[test]
fn replay_error_is_first_order() {
    let problem = Problem::setup(&TestCase::test1(127)).unwrap();
    let reference = [0.0473, 0.0236, 0.0117];
    let errs: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&dt| replay_error(&problem, dt)).collect();
    for (e, p) in errs.iter().zip(reference) {
        assert!((e / p - 1.0).abs() <= 0.25, "{e} vs {p}");
    }
    let rate = (errs[1] / errs[2]).ln() / 2f64.ln();
    assert!((rate - 1.0).abs() <= 0.15, "rate {rate}");
}

#[test]
fn replayed_control_matches_the_transformed_flow() {
    // the manufactured control started from q tracks cos(t) q; the
    // uncontrolled run from the same point does not
    let problem = Problem::setup(&TestCase::test1(63)).unwrap();
    let dt = 0.0125;
    let replay = run(&problem, &Controller::OpenLoop, dt, &problem.x0, 4.0, Noise::none()).unwrap();
    let idle = run(&problem, &Controller::Constant(vec![0.0]), dt, &problem.x0, 4.0, Noise::none()).unwrap();
    assert!(replay.cost.last().unwrap() < idle.cost.last().unwrap());
    let last = physical_states(&problem, &replay).pop().unwrap();
    let pair = problem.analytic.unwrap();
    let exact = problem.system.mesh.interpolate(|xi| pair.y_star(xi, 4.0));
    assert!(problem.system.mass_norm(&(last - exact)) < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip(seed in 0u64..10_000, t in 0.0f64..6.0) {
        use rand::{Rng, SeedableRng};
        let problem = PROBLEM.with(|p| p.clone());
        let tr = problem.transform.as_ref().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(problem.system.dofs(), |_, _| rng.gen_range(-3.0..3.0));
        let back = tr.untransform(&tr.transform(&y, t), t);
        prop_assert!((back - &y).amax() <= 1e-12);
    }
}

thread_local! {
    static PROBLEM: Problem = Problem::setup(&TestCase::test1(31)).unwrap();
}
