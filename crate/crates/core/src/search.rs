//! Neighbor queries for the images `base + Σ_k u_k dir_k` of one state under
//! many controls.
//!
//! Distances are first estimated from the expansion
//! `‖base - x_i‖² + 2 Σ_k u_k (base - x_i)·dir_k + ‖Σ_k u_k dir_k‖²`, which costs
//! `O(N d)` per query instead of per control. The estimate only prunes: every
//! surviving pair is re-measured with the direct distance, so results are
//! bitwise identical to a plain scan.

use nalgebra::DVector;

use crate::flow::combine_affine;
use crate::points::{sq_dist_below, PointSet};

/// Relative slack covering rounding in the expanded form.
const SLACK: f64 = 1e-10;

/// Nodes inside the radius (node order, exact squared distances) and the
/// nearest node of one image point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Neighbors {
    pub within: Vec<(u32, f64)>,
    pub nearest: u32,
}

pub struct AffineSearch<'a> {
    nodes: &'a PointSet,
    dirs: &'a [DVector<f64>],
    gram: Vec<f64>,
    node_sq: Vec<f64>,
}

impl<'a> AffineSearch<'a> {
    pub fn new(nodes: &'a PointSet, dirs: &'a [DVector<f64>]) -> Self {
        let m = dirs.len();
        let mut gram = vec![0.0; m * m];
        for k in 0..m {
            for l in 0..m {
                gram[k * m + l] = dirs[k].dot(&dirs[l]);
            }
        }
        let node_sq = nodes.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
        Self { nodes, dirs, gram, node_sq }
    }

    /// Neighbors within `radius` of `combine_affine(base, dirs, u)` for each `u`.
    pub fn query(&self, base: &DVector<f64>, controls: &[Vec<f64>], radius: f64) -> Vec<Neighbors> {
        let n = self.nodes.len();
        let m = self.dirs.len();
        let bound = radius * radius;
        let b = base.as_slice();
        let base_sq = base.norm_squared();
        // a_i = ‖base - x_i‖², c_ik = (base - x_i)·dir_k
        let mut a = vec![0.0; n];
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            let x = self.nodes.point(i);
            let mut s = 0.0;
            for (bj, xj) in b.iter().zip(x) {
                let d = bj - xj;
                s += d * d;
            }
            a[i] = s;
            for k in 0..m {
                let dir = self.dirs[k].as_slice();
                let mut p = 0.0;
                for j in 0..b.len() {
                    p += (b[j] - x[j]) * dir[j];
                }
                c[i * m + k] = p;
            }
        }

        let mut est = vec![0.0; n];
        let mut slack = vec![0.0; n];
        controls
            .iter()
            .map(|u| {
                let mut e = 0.0;
                for k in 0..m {
                    for l in 0..m {
                        e += u[k] * u[l] * self.gram[k * m + l];
                    }
                }
                let mut lo_best = f64::INFINITY;
                for i in 0..n {
                    let mut lin = 0.0;
                    let mut mag = 0.0;
                    for k in 0..m {
                        lin += u[k] * c[i * m + k];
                        mag += (u[k] * u[k] * a[i] * self.gram[k * m + k]).sqrt();
                    }
                    est[i] = a[i] + 2.0 * lin + e;
                    // bounds the rounding of both the expansion and the direct sum
                    slack[i] = SLACK * (a[i] + 2.0 * mag + e + base_sq + self.node_sq[i]);
                    lo_best = lo_best.min(est[i] + slack[i]);
                }
                let y = combine_affine(base, self.dirs, u);
                let y = y.as_slice();
                let mut within = Vec::new();
                for i in 0..n {
                    if est[i] - slack[i] < bound {
                        if let Some(d) = sq_dist_below(y, self.nodes.point(i), bound) {
                            within.push((i as u32, d));
                        }
                    }
                }
                let nearest = if within.is_empty() {
                    // only nodes whose lower bound beats every upper bound can be nearest
                    let mut best = (0u32, f64::INFINITY);
                    for i in 0..n {
                        if est[i] - slack[i] <= lo_best {
                            if let Some(d) = sq_dist_below(y, self.nodes.point(i), best.1) {
                                best = (i as u32, d);
                            }
                        }
                    }
                    best.0
                } else {
                    first_min(&within)
                };
                Neighbors { within, nearest }
            })
            .collect()
    }
}

/// Nodes within `radius` of `y` and its nearest node, by direct scan.
pub fn direct_neighbors(nodes: &PointSet, y: &[f64], radius: f64) -> Neighbors {
    let within = crate::shepard::neighbors_within(nodes, y, radius);
    let nearest = if within.is_empty() {
        crate::shepard::nearest_node(nodes, y) as u32
    } else {
        first_min(&within)
    };
    Neighbors { within, nearest }
}

fn first_min(list: &[(u32, f64)]) -> u32 {
    let mut best = list[0];
    for &(i, d) in &list[1..] {
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_scan_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 21;
        let n = 300;
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nodes = PointSet::from_rows(d, data).unwrap();
        let dirs: Vec<DVector<f64>> = (0..2)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-0.3..0.3)))
            .collect();
        let controls: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let search = AffineSearch::new(&nodes, &dirs);
        for q in 0..5 {
            let base = DVector::from_column_slice(nodes.point(q * 7));
            for radius in [0.0, 0.8, 1.5, 2.5] {
                let got = search.query(&base, &controls, radius);
                for (u, g) in controls.iter().zip(&got) {
                    let y = combine_affine(&base, &dirs, u);
                    assert_eq!(*g, direct_neighbors(&nodes, y.as_slice(), radius));
                }
            }
        }
    }
}
