//! End-to-end runs: grid generation, shape selection, simulation and the
//! convergence table of the manufactured problem.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::discounted_l2_distance;
use crate::grid::{generate_grid, ScatteredGrid};
use crate::hjb::{scan_shapes, simulate, FeedbackPolicy, HjbProblem, Noise, ShapeScan, Simulation, ValueFunction, ViOptions};
use crate::problems::{Problem, TestCase};

/// Grid from the constant-control trajectories of the problem.
pub fn build_grid(problem: &Problem) -> Result<ScatteredGrid> {
    let flow = problem.dynamics(problem.case.dt_bar)?;
    generate_grid(&problem.grid_spec(), &flow)
}

pub fn vi_options(case: &TestCase) -> ViOptions {
    ViOptions { tol: case.vi_tol, max_iter: case.max_iter() }
}

/// Shape scan over `thetas` with the value-iteration step and control set.
/// A scan without any converged run is returned flagged rather than failing.
pub fn solve(problem: &Problem, grid: Arc<ScatteredGrid>, thetas: &[f64]) -> Result<ShapeScan> {
    let case = &problem.case;
    let flow = problem.dynamics(case.dt_vi)?;
    let controls = case.vi_control_set();
    let hjb = HjbProblem::new(&flow, &problem.cost, case.lambda, &controls)?;
    scan_shapes(&hjb, grid, thetas, &vi_options(case))
}

/// How controls are chosen during a simulation.
#[derive(Debug, Clone)]
pub enum Controller<'a> {
    Feedback(&'a ValueFunction),
    /// The manufactured optimal control `u_d(t)`.
    OpenLoop,
    Constant(Vec<f64>),
}

/// Simulates from `x0` over `[0, horizon]` with step `dt`.
pub fn run(
    problem: &Problem,
    controller: &Controller<'_>,
    dt: f64,
    x0: &DVector<f64>,
    horizon: f64,
    noise: Noise,
) -> Result<Simulation> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let case = &problem.case;
    let flow = problem.dynamics(dt)?;
    let steps = (horizon / dt).round() as usize;
    match controller {
        Controller::Feedback(value) => {
            let controls = case.synth_control_set();
            let policy = FeedbackPolicy::new(value, &flow, &problem.cost, case.lambda, &controls)?;
            simulate(&flow, &problem.cost, case.lambda, x0, 0.0, steps, noise, |_, x, t| {
                policy.synthesize(x, t)
            })
        }
        Controller::OpenLoop => {
            let pair = problem
                .analytic
                .ok_or_else(|| Error::invalid("open-loop replay needs the manufactured control"))?;
            simulate(&flow, &problem.cost, case.lambda, x0, 0.0, steps, noise, |_, _, t| {
                Ok(vec![pair.u_d(t)])
            })
        }
        Controller::Constant(u) => {
            if u.len() != case.control_dim {
                return Err(Error::invalid("constant control has the wrong dimension"));
            }
            simulate(&flow, &problem.cost, case.lambda, x0, 0.0, steps, noise, |_, _, _| Ok(u.clone()))
        }
    }
}

/// States of a simulation in the original variables.
pub fn physical_states(problem: &Problem, sim: &Simulation) -> Vec<DVector<f64>> {
    sim.states
        .iter()
        .zip(&sim.times)
        .map(|(x, &t)| problem.to_physical(x, t))
        .collect()
}

/// One row of the convergence table; rates are absent in the first row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dt: f64,
    pub hjb_vs_optimal: f64,
    pub hjb_vs_optimal_rate: Option<f64>,
    pub hjb_vs_replay: f64,
    pub hjb_vs_replay_rate: Option<f64>,
    pub optimal_vs_replay: f64,
    pub optimal_vs_replay_rate: Option<f64>,
}

fn rate(prev: Option<(f64, f64)>, dt: f64, e: f64) -> Option<f64> {
    prev.map(|(dt0, e0)| (e0 / e).ln() / (dt0 / dt).ln())
}

/// Discounted distances between the closed loop `y_HJB`, the exact optimum
/// `y*` and the replay `y(u*)` of the exact control, for each step size.
/// All three are sampled at `t_k = kΔt`, `k < T/Δt`, in the original variables.
pub fn convergence_table(problem: &Problem, value: &ValueFunction, dts: &[f64]) -> Result<Vec<TableRow>> {
    let pair = problem
        .analytic
        .ok_or_else(|| Error::invalid("the convergence table needs an analytic solution (test1)"))?;
    if dts.is_empty() {
        return Err(Error::invalid("no step sizes given"));
    }
    let case = &problem.case;
    let mesh = &problem.system.mesh;
    let mass = &problem.system.mass;
    let mut rows = Vec::with_capacity(dts.len());
    let mut prev: Option<(f64, [f64; 3])> = None;
    for &dt in dts {
        let hjb = run(problem, &Controller::Feedback(value), dt, &problem.x0, case.t_sim, Noise::none())?;
        let replay = run(problem, &Controller::OpenLoop, dt, &problem.x0, case.t_sim, Noise::none())?;
        let n = hjb.controls.len();
        let y_hjb = &physical_states(problem, &hjb)[..n];
        let y_rep = &physical_states(problem, &replay)[..n];
        let y_opt: Vec<DVector<f64>> =
            hjb.times[..n].iter().map(|&t| mesh.interpolate(|xi| pair.y_star(xi, t))).collect();
        let e = [
            discounted_l2_distance(y_hjb, &y_opt, mass, case.lambda, dt)?,
            discounted_l2_distance(y_hjb, y_rep, mass, case.lambda, dt)?,
            discounted_l2_distance(&y_opt, y_rep, mass, case.lambda, dt)?,
        ];
        let r = |i: usize| rate(prev.map(|(d, p)| (d, p[i])), dt, e[i]);
        rows.push(TableRow {
            dt,
            hjb_vs_optimal: e[0],
            hjb_vs_optimal_rate: r(0),
            hjb_vs_replay: e[1],
            hjb_vs_replay_rate: r(1),
            optimal_vs_replay: e[2],
            optimal_vs_replay_rate: r(2),
        });
        prev = Some((dt, e));
    }
    Ok(rows)
}

/// Grid, shape scan and table for one configuration.
pub struct Study {
    pub grid: Arc<ScatteredGrid>,
    pub scan: ShapeScan,
    pub rows: Vec<TableRow>,
}

pub fn convergence_study(case: &TestCase, dts: &[f64]) -> Result<Study> {
    let problem = Problem::setup(case)?;
    if problem.analytic.is_none() {
        return Err(Error::invalid("the convergence table needs an analytic solution (test1)"));
    }
    let grid = Arc::new(build_grid(&problem)?);
    let scan = solve(&problem, grid.clone(), &case.thetas())?;
    let rows = convergence_table(&problem, &scan.value, dts)?;
    Ok(Study { grid, scan, rows })
}
