//! Semi-Lagrangian value iteration on scattered grids, residual-based choice
//! of the kernel shape, feedback synthesis and closed-loop simulation.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{evaluate_cost_functional, ControlSystem, RunningCost};
use crate::grid::ScatteredGrid;
use crate::points::PointSet;
use crate::search::{direct_neighbors, AffineSearch, Neighbors};
use crate::shepard::{apply_weights, eval_neighbors, push_weights, ShepardInterpolant, WendlandKernel};

/// Discounted infinite-horizon control problem discretized in time.
#[derive(Clone, Copy)]
pub struct HjbProblem<'a> {
    pub flow: &'a dyn ControlSystem,
    pub cost: &'a dyn RunningCost,
    pub lambda: f64,
    pub controls: &'a [Vec<f64>],
}

impl<'a> HjbProblem<'a> {
    pub fn new(
        flow: &'a dyn ControlSystem,
        cost: &'a dyn RunningCost,
        lambda: f64,
        controls: &'a [Vec<f64>],
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("discount must be positive, got {lambda}")));
        }
        if flow.dt() * lambda > 1.0 {
            return Err(Error::invalid(format!(
                "dt * lambda = {} exceeds 1; the scheme is not a contraction",
                flow.dt() * lambda
            )));
        }
        if controls.is_empty() {
            return Err(Error::invalid("control grid is empty"));
        }
        if controls.iter().any(|u| u.len() != flow.control_dim()) {
            return Err(Error::invalid("control sample has the wrong dimension"));
        }
        Ok(Self { flow, cost, lambda, controls })
    }

    pub fn dt(&self) -> f64 {
        self.flow.dt()
    }

    /// Contraction factor `1 - Δt λ`.
    pub fn beta(&self) -> f64 {
        1.0 - self.dt() * self.lambda
    }
}

/// Neighbors of `flow(x, u_c, t)` for every control, through the affine
/// split when the system provides one.
fn foot_neighbors(
    flow: &dyn ControlSystem,
    nodes: &PointSet,
    x: &DVector<f64>,
    controls: &[Vec<f64>],
    t: f64,
    radius: f64,
) -> Result<Vec<Neighbors>> {
    if let (Some(base), Some(dirs)) = (flow.affine_base(x, t), flow.control_directions()) {
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { t });
        }
        return Ok(AffineSearch::new(nodes, dirs).query(&base, controls, radius));
    }
    controls
        .iter()
        .map(|u| Ok(direct_neighbors(nodes, flow.step(x, u, t)?.as_slice(), radius)))
        .collect()
}

/// For every node `j` and control `c`, the grid nodes within `radius` of the
/// foot point `flow(x_j, u_c, t_j)`, together with the running cost
/// `g(x_j, u_c)` and the nearest node. Built once and reused for every shape
/// parameter whose support radius does not exceed `radius`.
#[derive(Debug, Clone)]
pub struct FootPoints {
    n_controls: usize,
    radius: f64,
    offsets: Vec<usize>,
    candidates: Vec<(u32, f64)>,
    nearest: Vec<u32>,
    running: Vec<f64>,
}

impl FootPoints {
    pub fn build(problem: &HjbProblem<'_>, grid: &ScatteredGrid, radius: f64) -> Result<Self> {
        let nodes = grid.points();
        let n_controls = problem.controls.len();
        let per_node: Vec<Result<(Vec<Vec<(u32, f64)>>, Vec<u32>, Vec<f64>)>> = (0..grid.len())
            .into_par_iter()
            .map(|j| {
                let x = nodes.vector(j);
                let nbs = foot_neighbors(problem.flow, nodes, &x, problem.controls, grid.node_time(j), radius)?;
                let (lists, nearest) = nbs.into_iter().map(|nb| (nb.within, nb.nearest)).unzip();
                Ok((lists, nearest, problem.cost.eval_many(&x, problem.controls)))
            })
            .collect();
        let mut out = Self {
            n_controls,
            radius,
            offsets: vec![0],
            candidates: Vec::new(),
            nearest: Vec::with_capacity(grid.len() * n_controls),
            running: Vec::with_capacity(grid.len() * n_controls),
        };
        for item in per_node {
            let (lists, nearest, running) = item?;
            for list in lists {
                out.candidates.extend_from_slice(&list);
                out.offsets.push(out.candidates.len());
            }
            out.nearest.extend(nearest);
            out.running.extend(running);
        }
        Ok(out)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_nodes(&self) -> usize {
        self.nearest.len() / self.n_controls
    }

    /// Sparse Shepard weights of every foot point for `kernel`.
    pub fn operator(&self, kernel: &WendlandKernel) -> Result<ShepardOperator> {
        if kernel.support_radius() > self.radius * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "kernel support {} exceeds the precomputed radius {}",
                kernel.support_radius(),
                self.radius
            )));
        }
        let rows = self.nearest.len();
        let mut op = ShepardOperator {
            n_controls: self.n_controls,
            offsets: Vec::with_capacity(rows + 1),
            nodes: Vec::new(),
            psi: Vec::new(),
            running: self.running.clone(),
        };
        op.offsets.push(0);
        for r in 0..rows {
            let cands = &self.candidates[self.offsets[r]..self.offsets[r + 1]];
            if !push_weights(kernel, cands, &mut op.nodes, &mut op.psi) {
                op.nodes.push(self.nearest[r]);
                op.psi.push(1.0);
            }
            op.offsets.push(op.nodes.len());
        }
        Ok(op)
    }
}

/// The semi-Lagrangian operator `W_σ` in assembled form: row `j·C + c` holds
/// the Shepard weights of the foot point of node `j` under control `c`.
#[derive(Debug, Clone)]
pub struct ShepardOperator {
    n_controls: usize,
    offsets: Vec<usize>,
    nodes: Vec<u32>,
    psi: Vec<f64>,
    running: Vec<f64>,
}

impl ShepardOperator {
    pub fn nnz(&self) -> usize {
        self.nodes.len()
    }

    /// `(W V)_j = min_c { Δt g(x_j, u_c) + β S[V](foot_{j,c}) }`; ties keep
    /// the lowest control index. Also returns the minimizing control.
    fn node_update(&self, j: usize, v: &[f64], dt: f64, beta: f64) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for c in 0..self.n_controls {
            let r = j * self.n_controls + c;
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            let val = dt * self.running[r] + beta * apply_weights(&self.nodes[a..b], &self.psi[a..b], v);
            if val < best {
                best = val;
                arg = c;
            }
        }
        (best, arg)
    }

    pub fn apply(&self, v: &[f64], dt: f64, beta: f64) -> Vec<f64> {
        let n = self.running.len() / self.n_controls;
        (0..n)
            .into_par_iter()
            .map(|j| self.node_update(j, v, dt, beta).0)
            .collect()
    }

    /// Minimizing control index at every node.
    pub fn policy(&self, v: &[f64], dt: f64, beta: f64) -> Vec<usize> {
        let n = self.running.len() / self.n_controls;
        (0..n).map(|j| self.node_update(j, v, dt, beta).1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iter: usize,
}

/// Converged (or flagged) output of value iteration.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub grid: Arc<ScatteredGrid>,
    pub values: Vec<f64>,
    pub kernel: WendlandKernel,
    pub iterations: usize,
    pub final_update: f64,
    pub converged: bool,
    /// Sup-norm change of every iteration.
    pub updates: Vec<f64>,
}

impl ValueFunction {
    pub fn sigma(&self) -> f64 {
        self.kernel.sigma()
    }

    pub fn interpolant(&self) -> Result<ShepardInterpolant> {
        ShepardInterpolant::new(self.grid.points().clone(), self.values.clone(), self.kernel)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Kernel with `ℓ` matched to the grid dimension.
pub fn kernel_for(grid: &ScatteredGrid, sigma: f64) -> Result<WendlandKernel> {
    WendlandKernel::for_dimension(grid.dim(), sigma)
}

/// One application of `W_σ` to `v`.
pub fn vi_operator(problem: &HjbProblem<'_>, grid: &ScatteredGrid, sigma: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_len(grid, v)?;
    let kernel = kernel_for(grid, sigma)?;
    let op = FootPoints::build(problem, grid, kernel.support_radius())?.operator(&kernel)?;
    Ok(op.apply(v, problem.dt(), problem.beta()))
}

fn check_len(grid: &ScatteredGrid, v: &[f64]) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::invalid(format!("{} values for {} nodes", v.len(), grid.len())));
    }
    Ok(())
}

/// Fixed-point iteration `V^{k+1} = W(V^k)` from `V^0 = 0` with an assembled operator.
pub fn iterate(
    op: &ShepardOperator,
    grid: Arc<ScatteredGrid>,
    kernel: WendlandKernel,
    dt: f64,
    beta: f64,
    opts: &ViOptions,
) -> Result<ValueFunction> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut v = vec![0.0; grid.len()];
    let mut updates = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = op.apply(&v, dt, beta);
        let change = sup_diff(&next, &v);
        v = next;
        updates.push(change);
        if !change.is_finite() {
            return Err(Error::Blowup { t: 0.0 });
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(ValueFunction {
        grid,
        values: v,
        kernel,
        iterations: updates.len(),
        final_update: updates.last().copied().unwrap_or(f64::INFINITY),
        converged,
        updates,
    })
}

pub fn vi_solve(
    problem: &HjbProblem<'_>,
    grid: Arc<ScatteredGrid>,
    sigma: f64,
    opts: &ViOptions,
) -> Result<ValueFunction> {
    let kernel = kernel_for(&grid, sigma)?;
    let op = FootPoints::build(problem, &grid, kernel.support_radius())?.operator(&kernel)?;
    iterate(&op, grid, kernel, problem.dt(), problem.beta(), opts)
}

/// `‖V - W_σ(V)‖_∞` over the grid nodes.
pub fn vi_residual(problem: &HjbProblem<'_>, grid: &ScatteredGrid, sigma: f64, v: &[f64]) -> Result<f64> {
    let w = vi_operator(problem, grid, sigma, v)?;
    Ok(sup_diff(v, &w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theta: f64,
    pub sigma: f64,
    pub residual: f64,
    pub iterations: usize,
    pub final_update: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ShapeScan {
    pub best_theta: f64,
    pub rows: Vec<ScanRow>,
    /// Value function at the selected shape parameter.
    pub value: ValueFunction,
}

impl ShapeScan {
    /// False when no run of the scan converged and the selection fell back
    /// to the smallest residual among non-converged runs.
    pub fn converged(&self) -> bool {
        self.value.converged
    }
}

/// Runs value iteration for each `θ` with `σ = θ / h_X` and keeps the one of
/// smallest residual (ties to the smaller `θ`); non-converged runs are skipped.
pub fn select_shape(
    problem: &HjbProblem<'_>,
    grid: Arc<ScatteredGrid>,
    thetas: &[f64],
    opts: &ViOptions,
) -> Result<ShapeScan> {
    let scan = scan_shapes(problem, grid, thetas, opts)?;
    if !scan.converged() {
        return Err(Error::NoConvergedShape);
    }
    Ok(scan)
}

/// Like [`select_shape`], but when no run converges it returns the
/// non-converged run of smallest residual instead of failing.
pub fn scan_shapes(
    problem: &HjbProblem<'_>,
    grid: Arc<ScatteredGrid>,
    thetas: &[f64],
    opts: &ViOptions,
) -> Result<ShapeScan> {
    if thetas.is_empty() || thetas.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("theta values must be positive"));
    }
    let h = grid.separation();
    let theta_min = thetas.iter().copied().fold(f64::INFINITY, f64::min);
    let feet = FootPoints::build(problem, &grid, h / theta_min)?;
    let (dt, beta) = (problem.dt(), problem.beta());
    let mut rows = Vec::with_capacity(thetas.len());
    // ranked by (converged first, residual, theta)
    let mut best: Option<(bool, f64, f64, ValueFunction)> = None;
    for &theta in thetas {
        let kernel = kernel_for(&grid, theta / h)?;
        let op = feet.operator(&kernel)?;
        let vf = iterate(&op, grid.clone(), kernel, dt, beta, opts)?;
        let residual = sup_diff(&vf.values, &op.apply(&vf.values, dt, beta));
        rows.push(ScanRow {
            theta,
            sigma: kernel.sigma(),
            residual,
            iterations: vf.iterations,
            final_update: vf.final_update,
            converged: vf.converged,
        });
        let better = match &best {
            None => true,
            Some((c, r, t, _)) => {
                (vf.converged && !c)
                    || (vf.converged == *c && (residual < *r || (residual == *r && theta < *t)))
            }
        };
        if better {
            best = Some((vf.converged, residual, theta, vf));
        }
    }
    let (_, _, best_theta, value) = best.expect("at least one theta");
    Ok(ShapeScan { best_theta, rows, value })
}

/// Feedback law `u(x, t) = argmin_u { Δt g(x, u) + (1 - λΔt) S[V](flow(x, u, t)) }`.
pub struct FeedbackPolicy<'a> {
    pub value: &'a ValueFunction,
    pub flow: &'a dyn ControlSystem,
    pub cost: &'a dyn RunningCost,
    pub lambda: f64,
    pub controls: &'a [Vec<f64>],
}

impl<'a> FeedbackPolicy<'a> {
    pub fn new(
        value: &'a ValueFunction,
        flow: &'a dyn ControlSystem,
        cost: &'a dyn RunningCost,
        lambda: f64,
        controls: &'a [Vec<f64>],
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::invalid("synthesis control grid is empty"));
        }
        if flow.state_dim() != value.grid.dim() {
            return Err(Error::invalid("flow and value function live in different dimensions"));
        }
        Ok(Self { value, flow, cost, lambda, controls })
    }

    pub fn dt(&self) -> f64 {
        self.flow.dt()
    }

    /// One-step objective of every control at `(x, t)`.
    pub fn objectives(&self, x: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
        let kernel = &self.value.kernel;
        let nbs = foot_neighbors(self.flow, self.value.grid.points(), x, self.controls, t, kernel.support_radius())?;
        let g = self.cost.eval_many(x, self.controls);
        let dt = self.dt();
        let beta = 1.0 - self.lambda * dt;
        Ok(nbs
            .iter()
            .zip(&g)
            .map(|(nb, gc)| dt * gc + beta * eval_neighbors(kernel, nb, &self.value.values))
            .collect())
    }

    /// Index of the minimizing control; ties keep the lowest index.
    pub fn synthesize_index(&self, x: &DVector<f64>, t: f64) -> Result<usize> {
        let obj = self.objectives(x, t)?;
        let mut arg = 0;
        for (c, &v) in obj.iter().enumerate() {
            if v < obj[arg] {
                arg = c;
            }
        }
        Ok(arg)
    }

    pub fn synthesize(&self, x: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
        Ok(self.controls[self.synthesize_index(x, t)?].clone())
    }
}

/// Trajectory, applied controls and running discounted cost of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub times: Vec<f64>,
    /// States `x_0, ..., x_n`.
    pub states: Vec<DVector<f64>>,
    /// Controls `u_0, ..., u_{n-1}`.
    pub controls: Vec<Vec<f64>>,
    /// `J_0, ..., J_n` with `J_k = Σ_{i<k} Δt e^{-λ iΔt} g(x_i, u_i)`.
    pub cost: Vec<f64>,
}

/// Additive per-step Gaussian disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub std: f64,
    pub seed: u64,
}

impl Noise {
    pub fn none() -> Self {
        Self { std: 0.0, seed: 0 }
    }
}

/// Runs `x_{k+1} = flow(x_k, u_k, t_k) + w_k` for `steps` steps, where
/// `u_k = control(k, x_k, t_k)` and `w_k ~ N(0, std² I)` from a seeded stream.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    flow: &dyn ControlSystem,
    cost: &dyn RunningCost,
    lambda: f64,
    x0: &DVector<f64>,
    t0: f64,
    steps: usize,
    noise: Noise,
    mut control: impl FnMut(usize, &DVector<f64>, f64) -> Result<Vec<f64>>,
) -> Result<Simulation> {
    if !(noise.std >= 0.0) {
        return Err(Error::invalid("noise standard deviation must be nonnegative"));
    }
    let dt = flow.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut times = vec![t0];
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let x = &states[k];
        let u = control(k, x, t)?;
        let mut next = flow.step(x, &u, t).map_err(|e| {
            if e.is_blowup() {
                Error::SimulationBlowup { step: k, t }
            } else {
                e
            }
        })?;
        if noise.std > 0.0 {
            for v in next.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationBlowup { step: k, t });
        }
        controls.push(u);
        states.push(next);
        times.push(t0 + (k + 1) as f64 * dt);
    }
    let cost = evaluate_cost_functional(&states[..steps], &controls, cost, lambda, dt)?;
    Ok(Simulation { times, states, controls, cost })
}

/// Closed loop under the feedback policy, over `[t0, t0 + T]` with the policy's step.
pub fn simulate_closed_loop(
    policy: &FeedbackPolicy<'_>,
    x0: &DVector<f64>,
    t0: f64,
    horizon: f64,
    noise: Noise,
) -> Result<Simulation> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let steps = (horizon / policy.dt()).round() as usize;
    simulate(policy.flow, policy.cost, policy.lambda, x0, t0, steps, noise, |_, x, t| {
        policy.synthesize(x, t)
    })
}
