//! Shepard approximation with compactly supported Wendland weights.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{sq_dist_below, PointSet};
use crate::search::Neighbors;

/// Denominators below this are treated as an empty support.
pub const MIN_DENOMINATOR: f64 = 1e-300;

/// Wendland function
/// `φ(r) = max{0, (1-σr)^{ℓ+2} ((ℓ²+4ℓ+3)σ²r² + (3ℓ+6)σr + 3)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WendlandKernel {
    ell: u32,
    sigma: f64,
}

impl WendlandKernel {
    pub fn new(ell: u32, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("shape parameter must be positive, got {sigma}")));
        }
        Ok(Self { ell, sigma })
    }

    /// Kernel for points in `R^dim`, with `ℓ = ⌊dim/2⌋ + 3`.
    pub fn for_dimension(dim: usize, sigma: f64) -> Result<Self> {
        Self::new((dim / 2 + 3) as u32, sigma)
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Points at distance `1/σ` or more get zero weight.
    pub fn support_radius(&self) -> f64 {
        1.0 / self.sigma
    }

    pub fn eval(&self, r: f64) -> f64 {
        let t = self.sigma * r;
        if t >= 1.0 || r >= self.support_radius() {
            return 0.0;
        }
        let l = self.ell as f64;
        let poly = (l * l + 4.0 * l + 3.0) * t * t + (3.0 * l + 6.0) * t + 3.0;
        ((1.0 - t).powi(self.ell as i32 + 2) * poly).max(0.0)
    }
}

/// Normalized Shepard weights `ψ_i(x)` of one query point, stored sparsely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShepardWeights {
    pub nodes: Vec<u32>,
    pub psi: Vec<f64>,
}

impl ShepardWeights {
    /// `Σ_i ψ_i v_i`, clamped to the range of the contributing values.
    pub fn apply(&self, values: &[f64]) -> f64 {
        apply_weights(&self.nodes, &self.psi, values)
    }
}

pub(crate) fn apply_weights(nodes: &[u32], psi: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&i, &w) in nodes.iter().zip(psi) {
        let v = values[i as usize];
        acc += w * v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // A convex combination can only leave [lo, hi] through rounding.
    acc.clamp(lo, hi)
}

/// Appends the normalized weights of the candidates (node, squared distance)
/// lying inside the support. Returns `false`, leaving the buffers unchanged,
/// when the support is empty or its weights underflow.
pub(crate) fn push_weights(
    kernel: &WendlandKernel,
    candidates: &[(u32, f64)],
    nodes: &mut Vec<u32>,
    psi: &mut Vec<f64>,
) -> bool {
    let r2_max = kernel.support_radius().powi(2);
    let start = nodes.len();
    let mut denom = 0.0;
    for &(i, r2) in candidates {
        if r2 < r2_max {
            let w = kernel.eval(r2.sqrt());
            if w > 0.0 {
                nodes.push(i);
                psi.push(w);
                denom += w;
            }
        }
    }
    if !(denom >= MIN_DENOMINATOR) {
        nodes.truncate(start);
        psi.truncate(start);
        return false;
    }
    for w in &mut psi[start..] {
        *w /= denom;
    }
    true
}

/// Index of the node closest to `x`; ties go to the lowest index.
pub fn nearest_node(nodes: &PointSet, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in nodes.iter().enumerate() {
        if let Some(d) = sq_dist_below(x, p, best_d) {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Nodes within `radius` of `x` with their squared distances, in node order.
pub fn neighbors_within(nodes: &PointSet, x: &[f64], radius: f64) -> Vec<(u32, f64)> {
    let bound = radius * radius;
    nodes
        .iter()
        .enumerate()
        .filter_map(|(i, p)| sq_dist_below(x, p, bound).map(|d| (i as u32, d)))
        .collect()
}

/// Shepard weights of `x` against `nodes`, falling back to the nearest node
/// when no node lies inside the kernel support.
pub fn shepard_weights(nodes: &PointSet, kernel: &WendlandKernel, x: &[f64]) -> ShepardWeights {
    let cands = neighbors_within(nodes, x, kernel.support_radius());
    let mut out = ShepardWeights::default();
    if !push_weights(kernel, &cands, &mut out.nodes, &mut out.psi) {
        out.nodes.push(nearest_node(nodes, x) as u32);
        out.psi.push(1.0);
    }
    out
}

/// Shepard value from a precomputed neighbor list, identical to
/// [`ShepardInterpolant::eval`] at the query point the list was built for.
pub fn eval_neighbors(kernel: &WendlandKernel, nb: &Neighbors, values: &[f64]) -> f64 {
    let mut nodes = Vec::with_capacity(nb.within.len());
    let mut psi = Vec::with_capacity(nb.within.len());
    if push_weights(kernel, &nb.within, &mut nodes, &mut psi) {
        apply_weights(&nodes, &psi, values)
    } else {
        values[nb.nearest as usize]
    }
}

/// `S^σ[V](x) = Σ_i V_i ψ_i(x)` on a fixed node set.
#[derive(Debug, Clone)]
pub struct ShepardInterpolant {
    nodes: Arc<PointSet>,
    values: Vec<f64>,
    kernel: WendlandKernel,
}

impl ShepardInterpolant {
    pub fn new(nodes: Arc<PointSet>, values: Vec<f64>, kernel: WendlandKernel) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("Shepard interpolant needs at least one node"));
        }
        if values.len() != nodes.len() {
            return Err(Error::invalid(format!(
                "{} values for {} nodes",
                values.len(),
                nodes.len()
            )));
        }
        Ok(Self { nodes, values, kernel })
    }

    pub fn nodes(&self) -> &Arc<PointSet> {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kernel(&self) -> &WendlandKernel {
        &self.kernel
    }

    pub fn weights(&self, x: &[f64]) -> ShepardWeights {
        shepard_weights(&self.nodes, &self.kernel, x)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights(x).apply(&self.values)
    }

    pub fn eval_vector(&self, x: &DVector<f64>) -> f64 {
        self.eval(x.as_slice())
    }

    /// Evaluates every row of `queries`; identical to calling [`Self::eval`] per row.
    pub fn eval_batch(&self, queries: &PointSet) -> Vec<f64> {
        (0..queries.len())
            .into_par_iter()
            .map(|q| self.eval(queries.point(q)))
            .collect()
    }
}
