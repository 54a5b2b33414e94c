//! Dense storage for point clouds in `R^d` and the distance kernel shared by
//! grid generation, Shepard evaluation and value iteration.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// `N` points in `R^d`, stored row-major (one point per row).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not form rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_vectors(points: &[DVector<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        let mut out = Self::new(dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::invalid("points have different dimensions"));
            }
            out.push(p.as_slice());
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.data.extend_from_slice(p);
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

const LANES: usize = 4;
const CHECK_EVERY: usize = 16;

/// Squared Euclidean distance, summed in a fixed lane order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist_below(a, b, f64::INFINITY).unwrap_or(f64::INFINITY)
}

/// Squared distance if it is below `bound`, else `None`.
///
/// The partial sums are checked against `bound` every few coordinates so far
/// pairs are rejected early. The summation order does not depend on `bound`,
/// so any returned value is bitwise identical to [`sq_dist`].
#[inline]
pub fn sq_dist_below(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let n = a.len();
    let mut start = 0;
    while start < n {
        let end = (start + CHECK_EVERY).min(n);
        for i in start..end {
            let d = a[i] - b[i];
            acc[i % LANES] += d * d;
        }
        if (acc[0] + acc[1]) + (acc[2] + acc[3]) >= bound {
            return None;
        }
        start = end;
    }
    let total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    (total < bound).then_some(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_distance_matches_plain_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let full = sq_dist(&a, &b);
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((full - naive).abs() < 1e-12 * naive);
        assert_eq!(sq_dist_below(&a, &b, full * 1.0001), Some(full));
        assert_eq!(sq_dist_below(&a, &b, full), None);
        assert_eq!(sq_dist_below(&a, &b, 0.1), None);
    }

    #[test]
    fn rows_round_trip() {
        let p = PointSet::from_rows(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.point(1), &[3.0, 4.0]);
        assert!(PointSet::from_rows(3, vec![1.0, 2.0]).is_err());
    }
}
