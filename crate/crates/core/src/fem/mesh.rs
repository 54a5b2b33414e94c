use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of the interval `(a, b)` with `d` interior nodes.
///
/// Degrees of freedom are the interior nodes `xi_i = a + i*h`, `i = 1..=d`;
/// the two endpoints carry the homogeneous volume constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeMesh {
    a: f64,
    b: f64,
    d: usize,
    h: f64,
}

impl FeMesh {
    pub fn new(d: usize, a: f64, b: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("mesh needs at least one interior node"));
        }
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::invalid(format!("mesh endpoints must satisfy a < b, got ({a}, {b})")));
        }
        Ok(Self { a, b, d, h: (b - a) / (d + 1) as f64 })
    }

    /// Mesh on the reference domain `(-1, 1)`.
    pub fn unit(d: usize) -> Result<Self> {
        Self::new(d, -1.0, 1.0)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of interior nodes (= number of unknowns).
    pub fn dofs(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_elements(&self) -> usize {
        self.d + 1
    }

    /// Coordinate of mesh vertex `k`, `k = 0..=d+1` (0 and d+1 are the endpoints).
    pub fn vertex(&self, k: usize) -> f64 {
        if k == self.d + 1 {
            self.b
        } else {
            self.a + k as f64 * self.h
        }
    }

    /// Coordinate of interior dof `i` (0-based).
    pub fn node(&self, i: usize) -> f64 {
        self.vertex(i + 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.node(i)).collect()
    }

    /// Endpoints of element `e` (`e = 0..=d`).
    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.vertex(e), self.vertex(e + 1))
    }

    /// Dofs attached to the left and right vertex of element `e`.
    pub fn element_dofs(&self, e: usize) -> [Option<usize>; 2] {
        let left = if e >= 1 { Some(e - 1) } else { None };
        let right = if e < self.d { Some(e) } else { None };
        [left, right]
    }

    /// Nodal interpolant of `f` (values at interior nodes).
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.d, (0..self.d).map(|i| f(self.node(i))))
    }

    /// Value at `x` of the piecewise-linear function with nodal values `coeffs`.
    pub fn eval_fe(&self, coeffs: &[f64], x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        let e = (((x - self.a) / self.h).floor() as usize).min(self.d);
        let (x0, _) = self.element(e);
        let w = (x - x0) / self.h;
        let [l, r] = self.element_dofs(e);
        let vl = l.map_or(0.0, |i| coeffs[i]);
        let vr = r.map_or(0.0, |i| coeffs[i]);
        vl * (1.0 - w) + vr * w
    }
}
