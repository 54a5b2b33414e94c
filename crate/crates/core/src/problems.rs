//! The three benchmark configurations: a manufactured linear problem with a
//! known optimal pair, a two-control problem observed on a target interval,
//! and a controlled bistable reaction.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_load_split, assemble_target_mass, AnalyticPair, DiscreteDynamics,
    FeMesh, FemSystem, Forcing, Nonlinearity, Scheme,
};
pub use crate::flow::evaluate_cost_functional;
use crate::flow::{QuadraticCost, RunningCost};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestName {
    Test1,
    Test2,
    Test3,
}

/// Every parameter of one experiment. Defaults come from [`TestCase::test1`],
/// [`TestCase::test2`] and [`TestCase::test3`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCase {
    pub name: TestName,
    pub d: usize,
    pub s: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Observation interval of the state cost; the whole domain if absent.
    pub target: Option<[f64; 2]>,
    /// Number of control components; each ranges over `[u_lo, u_hi]`.
    pub control_dim: usize,
    pub u_lo: f64,
    pub u_hi: f64,
    /// Control samples per component for grid generation, value iteration and synthesis.
    pub grid_controls: usize,
    pub vi_controls: usize,
    pub synth_controls: usize,
    pub dt_bar: f64,
    pub dt_vi: f64,
    pub dt_sim: f64,
    pub t_grid: f64,
    pub t_sim: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
    /// Switch-off time of the manufactured control (Test 1).
    pub t0_switch: Option<f64>,
    /// Multiplier of the initial datum, before any change of variables.
    pub x0_scale: f64,
    pub scheme: Scheme,
    pub vi_tol: f64,
    /// Iteration cap; derived from the contraction rate when absent.
    pub vi_max_iter: Option<usize>,
}

impl TestCase {
    pub fn test1(d: usize) -> Self {
        Self {
            name: TestName::Test1,
            d,
            s: 0.75,
            alpha: 1.0,
            gamma: 0.01,
            lambda: 0.5,
            target: None,
            control_dim: 1,
            u_lo: 0.0,
            u_hi: 1.0,
            grid_controls: 7,
            vi_controls: 21,
            synth_controls: 1681,
            dt_bar: 0.0125,
            dt_vi: 0.01,
            dt_sim: 0.0125,
            t_grid: 4.0,
            t_sim: 4.0,
            theta_min: 0.1,
            theta_max: 0.3,
            theta_step: 0.02,
            t0_switch: Some(3.0),
            x0_scale: 1.0,
            scheme: Scheme::ImexEuler,
            vi_tol: 1e-6,
            vi_max_iter: None,
        }
    }

    pub fn test2() -> Self {
        Self {
            name: TestName::Test2,
            d: 63,
            s: 0.75,
            alpha: 1.0,
            gamma: 1e-6,
            lambda: 0.5,
            target: Some([-0.5, 0.5]),
            control_dim: 2,
            u_lo: -0.5,
            u_hi: 0.0,
            grid_controls: 5,
            vi_controls: 5,
            synth_controls: 41,
            dt_bar: 0.025,
            dt_vi: 0.01,
            dt_sim: 0.025,
            t_grid: 6.0,
            t_sim: 10.0,
            theta_min: 0.01,
            theta_max: 0.01,
            theta_step: 0.01,
            t0_switch: None,
            x0_scale: 1.0,
            scheme: Scheme::ImexEuler,
            vi_tol: 1e-6,
            vi_max_iter: None,
        }
    }

    pub fn test3() -> Self {
        Self {
            name: TestName::Test3,
            d: 63,
            s: 0.75,
            alpha: 0.01,
            gamma: 0.01,
            lambda: 0.5,
            target: None,
            control_dim: 1,
            u_lo: -0.5,
            u_hi: 0.0,
            grid_controls: 11,
            vi_controls: 21,
            synth_controls: 81,
            dt_bar: 0.025,
            dt_vi: 0.01,
            dt_sim: 0.025,
            t_grid: 6.0,
            t_sim: 6.0,
            theta_min: 0.08,
            theta_max: 0.12,
            theta_step: 0.01,
            t0_switch: None,
            x0_scale: 1.0,
            scheme: Scheme::ImexEuler,
            vi_tol: 1e-6,
            vi_max_iter: None,
        }
    }

    pub fn default_for(name: TestName) -> Self {
        match name {
            TestName::Test1 => Self::test1(63),
            TestName::Test2 => Self::test2(),
            TestName::Test3 => Self::test3(),
        }
    }

    /// Parses a JSON config: `name` selects the defaults (and `d` the mesh for
    /// test1), every other key overrides a field.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::invalid("config must be a JSON object"))?;
        let name: TestName = serde_json::from_value(
            obj.get("name").cloned().ok_or_else(|| Error::invalid("config needs a \"name\""))?,
        )?;
        let base = match (name, obj.get("d").and_then(|d| d.as_u64())) {
            (TestName::Test1, Some(d)) => Self::test1(d as usize),
            _ => Self::default_for(name),
        };
        let mut merged = serde_json::to_value(base)?;
        let fields = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in obj {
            if !fields.contains_key(k) {
                return Err(Error::invalid(format!("unknown config field {k:?}")));
            }
            fields.insert(k.clone(), v.clone());
        }
        let case: Self = serde_json::from_value(merged)?;
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("s", self.s),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("dt_bar", self.dt_bar),
            ("dt_vi", self.dt_vi),
            ("dt_sim", self.dt_sim),
            ("t_grid", self.t_grid),
            ("t_sim", self.t_sim),
            ("theta_min", self.theta_min),
            ("theta_step", self.theta_step),
            ("vi_tol", self.vi_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.s >= 1.0 {
            return Err(Error::invalid("fractional order must be below 1"));
        }
        if self.d == 0 || self.control_dim == 0 {
            return Err(Error::invalid("d and control_dim must be positive"));
        }
        if self.u_lo > self.u_hi || self.theta_min > self.theta_max {
            return Err(Error::invalid("empty control box or theta range"));
        }
        if self.grid_controls == 0 || self.vi_controls == 0 || self.synth_controls == 0 {
            return Err(Error::invalid("control discretizations need at least one sample"));
        }
        if self.dt_vi * self.lambda > 1.0 {
            return Err(Error::invalid("dt_vi * lambda must not exceed 1"));
        }
        let dims = match self.name {
            TestName::Test2 => 2,
            _ => 1,
        };
        if self.control_dim != dims {
            return Err(Error::invalid(format!("{:?} has {dims} control component(s)", self.name)));
        }
        if let Some([lo, hi]) = self.target {
            if !(lo < hi) {
                return Err(Error::invalid("target interval must satisfy lo < hi"));
            }
        }
        if self.name == TestName::Test1 && self.t0_switch.is_none() {
            return Err(Error::invalid("test1 needs t0_switch"));
        }
        Ok(())
    }

    /// Shape parameters `θ_min, θ_min + Δθ, ...` up to `θ_max`.
    pub fn thetas(&self) -> Vec<f64> {
        theta_range(self.theta_min, self.theta_max, self.theta_step)
    }

    pub fn grid_control_set(&self) -> Vec<Vec<f64>> {
        control_grid(self.u_lo, self.u_hi, self.grid_controls, self.control_dim)
    }

    pub fn vi_control_set(&self) -> Vec<Vec<f64>> {
        control_grid(self.u_lo, self.u_hi, self.vi_controls, self.control_dim)
    }

    pub fn synth_control_set(&self) -> Vec<Vec<f64>> {
        control_grid(self.u_lo, self.u_hi, self.synth_controls, self.control_dim)
    }

    /// Iteration cap `10 ⌈log(tol) / log(1 - Δt λ)⌉` unless set explicitly.
    pub fn max_iter(&self) -> usize {
        self.vi_max_iter
            .unwrap_or_else(|| default_max_iter(self.vi_tol, self.dt_vi * self.lambda))
    }
}

pub fn default_max_iter(tol: f64, rate: f64) -> usize {
    if rate >= 1.0 {
        return 10;
    }
    10 * (tol.ln() / (1.0 - rate).ln()).ceil().max(1.0) as usize
}

/// `lo, lo + step, ...` up to `hi` (inclusive up to rounding).
pub fn theta_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// `n` equispaced samples of `[lo, hi]` per component, Cartesian product in
/// lexicographic order (first component slowest).
pub fn control_grid(lo: f64, hi: f64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if n == 1 {
        vec![lo]
    } else {
        (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect()
    };
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// Nodal change of variables `x̃ = x - y_d(t)` with
/// `y_d(t) = c_q(t) q + c_b(t) b̃` on the mesh nodes.
#[derive(Debug, Clone)]
pub struct Transform {
    pair: AnalyticPair,
    q_nodal: DVector<f64>,
    b_nodal: DVector<f64>,
}

impl Transform {
    pub fn y_d(&self, t: f64) -> DVector<f64> {
        &self.q_nodal * self.pair.y_d_q_coeff(t) + &self.b_nodal * self.pair.y_d_b_coeff(t)
    }

    pub fn transform(&self, y: &DVector<f64>, t: f64) -> DVector<f64> {
        y - self.y_d(t)
    }

    pub fn untransform(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        x + self.y_d(t)
    }
}

/// A fully assembled test problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub case: TestCase,
    pub system: Arc<FemSystem>,
    pub cost: QuadraticCost,
    /// Initial state in the variables the dynamics act on.
    pub x0: DVector<f64>,
    pub analytic: Option<AnalyticPair>,
    pub transform: Option<Transform>,
    forcing: Forcing,
    nonlinearity: Nonlinearity,
}

impl Problem {
    pub fn setup(case: &TestCase) -> Result<Self> {
        case.validate()?;
        match case.name {
            TestName::Test1 => test1_setup(case),
            TestName::Test2 => test2_setup(case),
            TestName::Test3 => test3_setup(case),
        }
    }

    /// Flow map of the state equation with step `dt`.
    pub fn dynamics(&self, dt: f64) -> Result<DiscreteDynamics> {
        DiscreteDynamics::new(
            self.system.clone(),
            self.case.alpha,
            self.nonlinearity,
            self.forcing.clone(),
            self.case.scheme,
            dt,
        )
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            initial_states: vec![self.x0.clone()],
            controls: self.case.grid_control_set(),
            dt_bar: self.case.dt_bar,
            k_bar: (self.case.t_grid / self.case.dt_bar).round() as usize + 1,
            t0: 0.0,
        }
    }

    /// Open-loop reference control (the manufactured optimum of Test 1).
    pub fn open_loop_control(&self, t: f64) -> Option<Vec<f64>> {
        self.analytic.map(|p| vec![p.u_d(t)])
    }

    /// State in the original variables.
    pub fn to_physical(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.transform {
            Some(tr) => tr.untransform(x, t),
            None => x.clone(),
        }
    }

    pub fn running_cost(&self) -> &dyn RunningCost {
        &self.cost
    }
}

fn mesh_and_pair(case: &TestCase) -> Result<(FeMesh, AnalyticPair)> {
    let mesh = FeMesh::new(case.d, -1.0, 1.0)?;
    let pair = AnalyticPair::new(
        case.s,
        case.t0_switch.unwrap_or(1.0),
        case.gamma,
        case.lambda,
        case.u_lo,
        case.u_hi,
    )?;
    Ok((mesh, pair))
}

/// Manufactured problem in the shifted variable `x̃ = y - y_d(t)`.
///
/// The shifted flow is the exact conjugate of the scheme applied to the
/// original equation, so transforming, stepping and transforming back
/// reproduces a step of `M ẏ = -A y + B(t) + u Q` up to rounding.
fn test1_setup(case: &TestCase) -> Result<Problem> {
    let (mesh, pair) = mesh_and_pair(case)?;
    let q_load = assemble_load(&mesh, |x| pair.q(x));
    let b_load = assemble_load(&mesh, |_| pair.b_tilde());
    let q_nodal = mesh.interpolate(|x| pair.q(x));
    let b_nodal = DVector::from_element(mesh.dofs(), pair.b_tilde());
    let system = Arc::new(FemSystem::assemble(mesh, case.s, vec![q_load.clone()])?);
    let alpha = case.alpha;

    let mq = &system.mass * &q_nodal;
    let mb = &system.mass * &b_nodal;
    let aq = &system.stiffness * &q_nodal * alpha;
    let ab = &system.stiffness * &b_nodal * alpha;
    // the stiffness acts on y_d at the time where the scheme is implicit
    let lag = match case.scheme {
        Scheme::ImexEuler => 1.0,
        Scheme::ExplicitEuler => 0.0,
    };
    let forcing = Forcing::zero()
        .term(q_load, move |t| pair.b_q_coeff(t))
        .term(b_load, move |t| pair.phi(t))
        .step_term(mq, move |t, dt| -(pair.y_d_q_coeff(t + dt) - pair.y_d_q_coeff(t)) / dt)
        .step_term(mb, move |t, dt| -(pair.y_d_b_coeff(t + dt) - pair.y_d_b_coeff(t)) / dt)
        .step_term(aq, move |t, dt| -pair.y_d_q_coeff(t + lag * dt))
        .step_term(ab, move |t, dt| -pair.y_d_b_coeff(t + lag * dt));

    let transform = Transform { pair, q_nodal: q_nodal.clone(), b_nodal };
    let x0 = transform.transform(&(q_nodal * case.x0_scale), 0.0);
    // ‖u q‖² = u² since ‖q‖ = 1
    let cost = QuadraticCost::new(system.mass.clone(), vec![case.gamma])?;
    Ok(Problem {
        case: case.clone(),
        system,
        cost,
        x0,
        analytic: Some(pair),
        transform: Some(transform),
        forcing,
        nonlinearity: Nonlinearity::None,
    })
}

fn test2_setup(case: &TestCase) -> Result<Problem> {
    let mesh = FeMesh::new(case.d, -1.0, 1.0)?;
    let indicator = |lo: f64, hi: f64| {
        assemble_load_split(&mesh, move |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 }, &[lo, hi])
    };
    let q1 = indicator(-0.75, -0.5);
    let q2 = indicator(0.5, 0.75);
    let source = indicator(-1.0, -0.75);
    let [t_lo, t_hi] = case.target.unwrap_or([-1.0, 1.0]);
    let target_mass = assemble_target_mass(&mesh, t_lo, t_hi)?;
    let system =
        Arc::new(FemSystem::assemble(mesh, case.s, vec![q1, q2])?.with_target_mass(target_mass.clone()));
    let forcing = Forcing::zero().term(source, |t| 1.0 - t.cos());
    // ‖u₁ q₁ + u₂ q₂‖² = (u₁² + u₂²) / 4 for the disjoint indicators
    let cost = QuadraticCost::new(target_mass, vec![case.gamma * 0.25; 2])?;
    Ok(Problem {
        case: case.clone(),
        x0: DVector::zeros(system.dofs()) * case.x0_scale,
        system,
        cost,
        analytic: None,
        transform: None,
        forcing,
        nonlinearity: Nonlinearity::None,
    })
}

fn test3_setup(case: &TestCase) -> Result<Problem> {
    let (mesh, pair) = mesh_and_pair(case)?;
    let q_load = assemble_load(&mesh, |x| pair.q(x));
    let x0 = mesh.interpolate(|x| pair.q(x)) * case.x0_scale;
    let system = Arc::new(FemSystem::assemble(mesh, case.s, vec![q_load])?);
    let cost = QuadraticCost::new(system.mass.clone(), vec![case.gamma])?;
    Ok(Problem {
        case: case.clone(),
        system,
        cost,
        x0,
        analytic: None,
        transform: None,
        forcing: Forcing::zero(),
        nonlinearity: Nonlinearity::Cubic,
    })
}
