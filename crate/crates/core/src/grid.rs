//! Scattered state-space grids harvested from controlled trajectories.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ControlSystem;
use crate::points::{sq_dist_below, PointSet};

/// Initial states, constant controls and horizon for grid generation.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub initial_states: Vec<DVector<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub dt_bar: f64,
    /// Points per trajectory, including the initial state.
    pub k_bar: usize,
    /// Time attached to the initial states.
    pub t0: f64,
}

impl GridSpec {
    fn validate(&self, flow: &dyn ControlSystem) -> Result<()> {
        if self.initial_states.is_empty() || self.controls.is_empty() {
            return Err(Error::invalid("grid generation needs initial states and controls"));
        }
        if self.k_bar == 0 {
            return Err(Error::invalid("trajectories need at least one point"));
        }
        if !(self.dt_bar > 0.0) {
            return Err(Error::invalid("grid time step must be positive"));
        }
        if (flow.dt() - self.dt_bar).abs() > 1e-14 * self.dt_bar {
            return Err(Error::invalid(format!(
                "flow step {} differs from the grid step {}",
                flow.dt(),
                self.dt_bar
            )));
        }
        let d = flow.state_dim();
        if self.initial_states.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("initial state has the wrong dimension"));
        }
        let m = flow.control_dim();
        if self.controls.iter().any(|u| u.len() != m) {
            return Err(Error::invalid("control sample has the wrong dimension"));
        }
        Ok(())
    }
}

/// Trajectory indices `(i, j, k)` of the first occurrence of a grid node:
/// initial state `i`, control `j`, step `k` (0 = initial state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub initial: usize,
    pub control: usize,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct ScatteredGrid {
    points: Arc<PointSet>,
    provenance: Vec<Provenance>,
    separation: f64,
    dt_bar: f64,
    t0: f64,
}

impl ScatteredGrid {
    /// Builds a grid from stored nodes, recomputing the separation distance.
    pub fn from_parts(
        points: PointSet,
        provenance: Vec<Provenance>,
        dt_bar: f64,
        t0: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a grid needs at least one node"));
        }
        if provenance.len() != points.len() {
            return Err(Error::invalid("provenance length does not match the node count"));
        }
        let separation = if points.len() < 2 {
            f64::INFINITY
        } else {
            separation_distance(&points)?
        };
        if separation == 0.0 {
            return Err(Error::invalid("grid contains repeated nodes"));
        }
        Ok(Self { points: Arc::new(points), provenance, separation, dt_bar, t0 })
    }

    pub fn points(&self) -> &Arc<PointSet> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    /// Separation distance `h_X`; infinite for a single node.
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn dt_bar(&self) -> f64 {
        self.dt_bar
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Time at which node `j` was visited by its trajectory.
    pub fn node_time(&self, j: usize) -> f64 {
        self.t0 + self.provenance[j].step as f64 * self.dt_bar
    }
}

/// Runs every (initial state, control) trajectory and keeps the distinct points.
///
/// Trajectory `(i, j)` is `x_0 = x̄_i`, `x_{k+1} = flow(x_k, ū_j, t0 + k Δt̄)`
/// for `k < K̄ - 1`. Nodes are ordered by first occurrence in `(i, j, k)` order
/// and duplicates are detected by bitwise equality.
pub fn generate_grid(spec: &GridSpec, flow: &dyn ControlSystem) -> Result<ScatteredGrid> {
    spec.validate(flow)?;
    let pairs: Vec<(usize, usize)> = (0..spec.initial_states.len())
        .flat_map(|i| (0..spec.controls.len()).map(move |j| (i, j)))
        .collect();
    let trajectories: Vec<Result<Vec<DVector<f64>>>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let u = &spec.controls[j];
            let mut traj = Vec::with_capacity(spec.k_bar);
            traj.push(spec.initial_states[i].clone());
            for k in 0..spec.k_bar - 1 {
                let t = spec.t0 + k as f64 * spec.dt_bar;
                let next = flow.step(&traj[k], u, t).map_err(|e| {
                    if e.is_blowup() {
                        Error::GridBlowup { initial: i, control: j, step: k + 1 }
                    } else {
                        e
                    }
                })?;
                traj.push(next);
            }
            Ok(traj)
        })
        .collect();

    let d = flow.state_dim();
    let mut points = PointSet::new(d);
    let mut provenance = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for (&(i, j), traj) in pairs.iter().zip(trajectories) {
        for (k, x) in traj?.iter().enumerate() {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                points.push(x.as_slice());
                provenance.push(Provenance { initial: i, control: j, step: k });
            }
        }
    }
    ScatteredGrid::from_parts(points, provenance, spec.dt_bar, spec.t0)
}

/// Smallest Euclidean distance between two rows of `points`.
pub fn separation_distance(points: &PointSet) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid(format!("separation distance needs at least 2 points, got {n}")));
    }
    let best_sq = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let p = points.point(i);
            let mut best = f64::INFINITY;
            for j in i + 1..n {
                if let Some(d) = sq_dist_below(p, points.point(j), best) {
                    best = d;
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(best_sq.sqrt())
}
