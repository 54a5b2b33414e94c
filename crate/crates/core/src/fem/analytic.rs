use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Closed-form data of the manufactured Test-1 problem on `D = (-1, 1)`.
///
/// `q` solves the fractional Poisson problem with the constant right-hand side
/// `b̃`, normalized so that `‖q‖_{L²(D)} = 1`. From it the desired state `y_d`,
/// the forcing `b` and the optimal control `u_d = proj_U(κ)` are built so that
/// `y*(ξ,t) = cos(t) q(ξ)` is the optimal state starting from `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPair {
    pub s: f64,
    pub t0: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    q_scale: f64,
    b_tilde: f64,
}

impl AnalyticPair {
    pub fn new(s: f64, t0: f64, gamma_: f64, lambda: f64, u_lo: f64, u_hi: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid(format!("fractional order must lie in (0, 1), got {s}")));
        }
        if !(t0 > 0.0 && gamma_ > 0.0 && lambda > 0.0) {
            return Err(Error::invalid("T0, gamma and lambda must be positive"));
        }
        if !(u_lo <= u_hi) {
            return Err(Error::invalid("control interval must satisfy lo <= hi"));
        }
        let g_half = gamma(0.5);
        let q_scale = (gamma(2.0 * s + 1.5) / (gamma(2.0 * s + 1.0) * g_half)).sqrt();
        let b_tilde = 2f64.powf(2.0 * s) * gamma(1.0 + s) * gamma(s + 0.5) / g_half * q_scale;
        Ok(Self { s, t0, gamma: gamma_, lambda, u_lo, u_hi, q_scale, b_tilde })
    }

    /// `q(ξ) = c_s (1-ξ²)_+^s`.
    pub fn q(&self, xi: f64) -> f64 {
        let base = 1.0 - xi * xi;
        if base <= 0.0 {
            0.0
        } else {
            self.q_scale * base.powf(self.s)
        }
    }

    /// The constant right-hand side `b̃` with `(-Δ)^s q = b̃` on `D`.
    pub fn b_tilde(&self) -> f64 {
        self.b_tilde
    }

    pub fn phi(&self, t: f64) -> f64 {
        t.cos()
    }

    pub fn dphi(&self, t: f64) -> f64 {
        -t.sin()
    }

    /// `κ(t) = (T0 - t)² 1{t ≤ T0}`.
    pub fn kappa(&self, t: f64) -> f64 {
        if t <= self.t0 {
            (self.t0 - t).powi(2)
        } else {
            0.0
        }
    }

    pub fn dkappa(&self, t: f64) -> f64 {
        if t <= self.t0 {
            -2.0 * (self.t0 - t)
        } else {
            0.0
        }
    }

    pub fn ddkappa(&self, t: f64) -> f64 {
        if t < self.t0 {
            2.0
        } else {
            0.0
        }
    }

    /// Optimal (open-loop) control `proj_U(κ(t))`.
    pub fn u_d(&self, t: f64) -> f64 {
        self.kappa(t).clamp(self.u_lo, self.u_hi)
    }

    /// Coefficient of `q` in `y_d`: `φ - γκ' + λγκ`.
    pub fn y_d_q_coeff(&self, t: f64) -> f64 {
        self.phi(t) - self.gamma * self.dkappa(t) + self.lambda * self.gamma * self.kappa(t)
    }

    /// Coefficient of `b̃` in `y_d`: `γκ`.
    pub fn y_d_b_coeff(&self, t: f64) -> f64 {
        self.gamma * self.kappa(t)
    }

    pub fn dy_d_q_coeff(&self, t: f64) -> f64 {
        self.dphi(t) - self.gamma * self.ddkappa(t) + self.lambda * self.gamma * self.dkappa(t)
    }

    pub fn dy_d_b_coeff(&self, t: f64) -> f64 {
        self.gamma * self.dkappa(t)
    }

    /// Desired state `y_d(ξ,t) = φq - γκ'q + γκb̃ + λγκq` on `D`.
    pub fn y_d(&self, xi: f64, t: f64) -> f64 {
        self.y_d_q_coeff(t) * self.q(xi) + self.y_d_b_coeff(t) * self.b_tilde
    }

    /// Forcing `b(ξ,t) = φ'q + φb̃ - u_d q` on `D`.
    pub fn b(&self, xi: f64, t: f64) -> f64 {
        self.b_q_coeff(t) * self.q(xi) + self.phi(t) * self.b_tilde
    }

    /// Coefficient of `q` in the forcing: `φ' - u_d`.
    pub fn b_q_coeff(&self, t: f64) -> f64 {
        self.dphi(t) - self.u_d(t)
    }

    /// Optimal state `y*(ξ,t) = φ(t) q(ξ)`.
    pub fn y_star(&self, xi: f64, t: f64) -> f64 {
        self.phi(t) * self.q(xi)
    }
}
