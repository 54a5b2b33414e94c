use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::assembly::{assemble_fractional_stiffness, assemble_mass};
use super::mesh::FeMesh;
use crate::error::{Error, Result};
use crate::flow::ControlSystem;

/// Matrices and vectors of the semi-discrete state equation
/// `M ẏ = -α A y + F(y) + B(t) + Σ_k u_k Q_k`.
#[derive(Debug, Clone)]
pub struct FemSystem {
    pub mesh: FeMesh,
    pub s: f64,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// Control injections `Q_k = (⟨q_k, φ_i⟩)_i`.
    pub injections: Vec<DVector<f64>>,
    /// Mass matrix restricted to a target interval, when the cost only sees part of `D`.
    pub target_mass: Option<DMatrix<f64>>,
}

impl FemSystem {
    pub fn assemble(mesh: FeMesh, s: f64, injections: Vec<DVector<f64>>) -> Result<Self> {
        for q in &injections {
            if q.len() != mesh.dofs() {
                return Err(Error::invalid("control injection length does not match the mesh"));
            }
        }
        Ok(Self {
            mass: assemble_mass(&mesh),
            stiffness: assemble_fractional_stiffness(&mesh, s)?,
            mesh,
            s,
            injections,
            target_mass: None,
        })
    }

    pub fn with_target_mass(mut self, m: DMatrix<f64>) -> Self {
        self.target_mass = Some(m);
        self
    }

    pub fn dofs(&self) -> usize {
        self.mesh.dofs()
    }

    /// `‖x‖_M = sqrt(xᵀ M x)`.
    pub fn mass_norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.mass * x)).max(0.0).sqrt()
    }
}

/// Reaction term of the state equation, applied componentwise to nodal values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    #[default]
    None,
    /// `F(y) = y² - y³`.
    Cubic,
}

impl Nonlinearity {
    pub fn apply(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Nonlinearity::None => None,
            Nonlinearity::Cubic => Some(x.map(|y| y * y - y * y * y)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `x⁺ = x + Δt M⁻¹(-αAx + F(x) + B(t) + Σ u_k Q_k)`.
    ExplicitEuler,
    /// `(M + Δt α A) x⁺ = M x + Δt (F(x) + B(t) + Σ u_k Q_k)`.
    #[default]
    ImexEuler,
}

type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Time-dependent load `B(t) = Σ_j c_j(t) v_j` with fixed vectors `v_j`.
///
/// Coefficients may also depend on the step size, which lets a load encode a
/// difference quotient of known data over one step.
#[derive(Clone, Default)]
pub struct Forcing {
    terms: Vec<(DVector<f64>, Coefficient)>,
}

impl Forcing {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(mut self, v: DVector<f64>, coeff: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terms.push((v, Arc::new(move |t, _| coeff(t))));
        self
    }

    /// Adds a term whose coefficient `c(t, Δt)` sees the step size.
    pub fn step_term(
        mut self,
        v: DVector<f64>,
        coeff: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terms.push((v, Arc::new(coeff)));
        self
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `scale · B(t)` for step size `dt` into `out`.
    pub fn add_to(&self, t: f64, dt: f64, scale: f64, out: &mut DVector<f64>) {
        for (v, c) in &self.terms {
            out.axpy(scale * c(t, dt), v, 1.0);
        }
    }

    pub fn eval(&self, t: f64, dt: f64, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        self.add_to(t, dt, 1.0, &mut out);
        out
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Forcing").field("terms", &self.terms.len()).finish()
    }
}

/// One-step flow map of the semi-discrete state equation.
///
/// The control enters linearly and every other term is either implicit and
/// linear or explicit, so `x⁺ = base(x, t) + Σ_k u_k dir_k` with directions that
/// do not depend on the state or time.
#[derive(Debug, Clone)]
pub struct DiscreteDynamics {
    system: Arc<FemSystem>,
    alpha: f64,
    nonlinearity: Nonlinearity,
    forcing: Forcing,
    scheme: Scheme,
    dt: f64,
    factor: Cholesky<f64, Dyn>,
    directions: Vec<DVector<f64>>,
}

impl DiscreteDynamics {
    pub fn new(
        system: Arc<FemSystem>,
        alpha: f64,
        nonlinearity: Nonlinearity,
        forcing: Forcing,
        scheme: Scheme,
        dt: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("diffusion coefficient must be positive, got {alpha}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let lhs = match scheme {
            Scheme::ExplicitEuler => system.mass.clone(),
            Scheme::ImexEuler => &system.mass + &system.stiffness * (dt * alpha),
        };
        let factor = Cholesky::new(lhs)
            .ok_or_else(|| Error::LinearAlgebra("step matrix is not positive definite".into()))?;
        let directions = system.injections.iter().map(|q| factor.solve(&(q * dt))).collect();
        Ok(Self { system, alpha, nonlinearity, forcing, scheme, dt, factor, directions })
    }

    /// Same dynamics with a different step size.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(
            self.system.clone(),
            self.alpha,
            self.nonlinearity,
            self.forcing.clone(),
            self.scheme,
            dt,
        )
    }

    pub fn system(&self) -> &Arc<FemSystem> {
        &self.system
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    /// Control-free part of the step: the image of `x` under `u = 0`.
    pub fn base_step(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let sys = &*self.system;
        let mut rhs = match self.nonlinearity.apply(x) {
            Some(f) => f,
            None => DVector::zeros(x.len()),
        };
        self.forcing.add_to(t, self.dt, 1.0, &mut rhs);
        match self.scheme {
            Scheme::ExplicitEuler => {
                rhs.gemv(-self.alpha, &sys.stiffness, x, 1.0);
                let mut out = self.factor.solve(&(rhs * self.dt));
                out += x;
                out
            }
            Scheme::ImexEuler => {
                let mut b = rhs * self.dt;
                b.gemv(1.0, &sys.mass, x, 1.0);
                self.factor.solve(&b)
            }
        }
    }

    /// `x⁺ = flow(x, u, t)`.
    pub fn flow_step(&self, x: &DVector<f64>, u: &[f64], t: f64) -> Result<DVector<f64>> {
        let base = self.base_step(x, t);
        let out = crate::flow::combine_affine(&base, &self.directions, u);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Blowup { t })
        }
    }

    /// Trajectory `x_0, ..., x_n` under the control path `u(k)`, starting at time `t0`.
    pub fn trajectory(
        &self,
        x0: &DVector<f64>,
        t0: f64,
        steps: usize,
        mut control: impl FnMut(usize, f64) -> Vec<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.clone());
        for k in 0..steps {
            let t = t0 + k as f64 * self.dt;
            let u = control(k, t);
            let next = self.flow_step(&out[k], &u, t)?;
            out.push(next);
        }
        Ok(out)
    }
}

impl ControlSystem for DiscreteDynamics {
    fn state_dim(&self) -> usize {
        self.system.dofs()
    }

    fn control_dim(&self) -> usize {
        self.directions.len()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &DVector<f64>, u: &[f64], t: f64) -> Result<DVector<f64>> {
        self.flow_step(x, u, t)
    }

    fn affine_base(&self, x: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
        Some(self.base_step(x, t))
    }

    fn control_directions(&self) -> Option<&[DVector<f64>]> {
        Some(&self.directions)
    }
}

/// Discounted space-time distance `sqrt(Σ_k Δt e^{-λ k Δt} e_kᵀ M e_k)`,
/// `e_k = a_k - b_k` (left-endpoint rule over the supplied samples).
pub fn discounted_l2_distance(
    a: &[DVector<f64>],
    b: &[DVector<f64>],
    mass: &DMatrix<f64>,
    lambda: f64,
    dt: f64,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("trajectory lengths differ: {} vs {}", a.len(), b.len())));
    }
    let mut acc = 0.0;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != mass.nrows() || y.len() != mass.nrows() {
            return Err(Error::invalid("trajectory state has wrong dimension"));
        }
        let e = x - y;
        acc += dt * (-lambda * k as f64 * dt).exp() * e.dot(&(mass * &e));
    }
    Ok(acc.max(0.0).sqrt())
}
