//! Abstractions shared by grid generation, value iteration and simulation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete-time controlled system `x⁺ = step(x, u, t)` with a fixed step size.
pub trait ControlSystem: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn step(&self, x: &DVector<f64>, u: &[f64], t: f64) -> Result<DVector<f64>>;

    /// For systems affine in the control, the image of `x` under `u = 0`.
    /// `step(x, u, t)` must then equal `combine_affine(base, directions, u)` bitwise.
    fn affine_base(&self, _x: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        None
    }

    /// State-independent control directions of an affine system.
    fn control_directions(&self) -> Option<&[DVector<f64>]> {
        None
    }
}

/// `base + Σ_k u_k dir_k`, accumulated in control order.
pub fn combine_affine(base: &DVector<f64>, dirs: &[DVector<f64>], u: &[f64]) -> DVector<f64> {
    let mut out = base.clone();
    for (d, &uk) in dirs.iter().zip(u) {
        if uk != 0.0 {
            out.axpy(uk, d, 1.0);
        }
    }
    out
}

/// Running cost `g(x, u)`.
pub trait RunningCost: Sync {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> f64;

    /// `g(x, u)` for every control in `controls`.
    fn eval_many(&self, x: &DVector<f64>, controls: &[Vec<f64>]) -> Vec<f64> {
        controls.iter().map(|u| self.eval(x, u)).collect()
    }
}

/// `g(x, u) = ½ xᵀ W x + ½ Σ_k r_k u_k²`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub state_weight: DMatrix<f64>,
    pub control_weights: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(state_weight: DMatrix<f64>, control_weights: Vec<f64>) -> Result<Self> {
        if state_weight.nrows() != state_weight.ncols() {
            return Err(Error::invalid("state weight must be square"));
        }
        Ok(Self { state_weight, control_weights })
    }

    pub fn state_part(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.state_weight * x))
    }

    pub fn control_part(&self, u: &[f64]) -> f64 {
        0.5 * self.control_weights.iter().zip(u).map(|(r, v)| r * v * v).sum::<f64>()
    }
}

impl RunningCost for QuadraticCost {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> f64 {
        self.state_part(x) + self.control_part(u)
    }

    fn eval_many(&self, x: &DVector<f64>, controls: &[Vec<f64>]) -> Vec<f64> {
        let sx = self.state_part(x);
        controls.iter().map(|u| sx + self.control_part(u)).collect()
    }
}

/// Running cost given by a closure.
pub struct FnCost<F>(pub F);

impl<F> RunningCost for FnCost<F>
where
    F: Fn(&DVector<f64>, &[f64]) -> f64 + Sync,
{
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> f64 {
        (self.0)(x, u)
    }
}

/// Control system given by a step closure; used for small model problems.
pub struct FnSystem<F> {
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    pub step: F,
}

impl<F> ControlSystem for FnSystem<F>
where
    F: Fn(&DVector<f64>, &[f64], f64) -> DVector<f64> + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &DVector<f64>, u: &[f64], t: f64) -> Result<DVector<f64>> {
        let out = (self.step)(x, u, t);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Blowup { t })
        }
    }
}

/// Affine system `x⁺ = base(x, t) + Σ u_k dir_k` given by a closure for the base.
pub struct AffineFnSystem<F> {
    pub dt: f64,
    pub base: F,
    pub directions: Vec<DVector<f64>>,
}

impl<F> ControlSystem for AffineFnSystem<F>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64> + Sync,
{
    fn state_dim(&self) -> usize {
        self.directions.first().map_or(0, |d| d.len())
    }

    fn control_dim(&self) -> usize {
        self.directions.len()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &DVector<f64>, u: &[f64], t: f64) -> Result<DVector<f64>> {
        let out = combine_affine(&(self.base)(x, t), &self.directions, u);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Blowup { t })
        }
    }

    fn affine_base(&self, x: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
        Some((self.base)(x, t))
    }

    fn control_directions(&self) -> Option<&[DVector<f64>]> {
        Some(&self.directions)
    }
}

/// Partial sums `J_k = Σ_{i<k} Δt e^{-λ i Δt} g(x_i, u_i)`, `k = 0..=n`.
pub fn evaluate_cost_functional(
    trajectory: &[DVector<f64>],
    controls: &[Vec<f64>],
    cost: &dyn RunningCost,
    lambda: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if trajectory.len() != controls.len() {
        return Err(Error::invalid(format!(
            "{} states but {} controls",
            trajectory.len(),
            controls.len()
        )));
    }
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for (i, (x, u)) in trajectory.iter().zip(controls).enumerate() {
        acc += dt * (-lambda * i as f64 * dt).exp() * cost.eval(x, u);
        out.push(acc);
    }
    Ok(out)
}
