use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use super::mesh::FeMesh;
use super::quadrature::{gauss16, gauss32, gauss5, integrate};
use crate::error::{Error, Result};

/// `C_{1,s}`: the constant making the integral operator's Fourier symbol `|ω|^{2s}`.
pub fn fractional_constant(s: f64) -> f64 {
    4f64.powf(s) * s * gamma(s + 0.5) / (PI.sqrt() * gamma(1.0 - s))
}

fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("fractional order must lie in (0, 1), got {s}")))
    }
}

/// Slopes of the two local hat functions on an element of width `h`.
fn slopes(h: f64) -> [f64; 2] {
    [-1.0 / h, 1.0 / h]
}

/// Values of the two local hat functions at the reference coordinate `t ∈ [0, 1]`.
fn shapes(t: f64) -> [f64; 2] {
    [1.0 - t, t]
}

/// Tridiagonal mass matrix `M_ij = (φ_i, φ_j)`.
pub fn assemble_mass(mesh: &FeMesh) -> DMatrix<f64> {
    let n = mesh.dofs();
    let h = mesh.h();
    let local = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let mut m = DMatrix::zeros(n, n);
    for e in 0..mesh.num_elements() {
        let dofs = mesh.element_dofs(e);
        for (p, dp) in dofs.iter().enumerate() {
            for (q, dq) in dofs.iter().enumerate() {
                if let (Some(i), Some(j)) = (dp, dq) {
                    m[(*i, *j)] += local[p][q];
                }
            }
        }
    }
    m
}

/// Mass matrix restricted to the target interval `[lo, hi]`: `∫_{[lo,hi]} φ_i φ_j`.
pub fn assemble_target_mass(mesh: &FeMesh, lo: f64, hi: f64) -> Result<DMatrix<f64>> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("target interval must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if lo < mesh.a() || hi > mesh.b() {
        return Err(Error::invalid("target interval must lie inside the domain"));
    }
    let n = mesh.dofs();
    let h = mesh.h();
    let mut m = DMatrix::zeros(n, n);
    for e in 0..mesh.num_elements() {
        let (x0, x1) = mesh.element(e);
        let (c0, c1) = (x0.max(lo), x1.min(hi));
        if c0 >= c1 {
            continue;
        }
        let dofs = mesh.element_dofs(e);
        for (p, dp) in dofs.iter().enumerate() {
            for (q, dq) in dofs.iter().enumerate() {
                if let (Some(i), Some(j)) = (dp, dq) {
                    // the integrand is quadratic on the clipped piece: 5-point Gauss is exact
                    m[(*i, *j)] += integrate(gauss5(), c0, c1, |x| {
                        let sh = shapes((x - x0) / h);
                        sh[p] * sh[q]
                    });
                }
            }
        }
    }
    Ok(m)
}

/// Load vector `∫_D g φ_i` with 5-point Gauss–Legendre per element.
pub fn assemble_load(mesh: &FeMesh, g: impl Fn(f64) -> f64) -> DVector<f64> {
    assemble_load_split(mesh, g, &[])
}

/// Load vector where every element is additionally split at the given breakpoints
/// (discontinuities of `g`), so piecewise-polynomial data such as indicators are
/// integrated exactly.
pub fn assemble_load_split(mesh: &FeMesh, g: impl Fn(f64) -> f64, breaks: &[f64]) -> DVector<f64> {
    let n = mesh.dofs();
    let h = mesh.h();
    let mut out = DVector::zeros(n);
    let mut pieces = Vec::with_capacity(breaks.len() + 2);
    for e in 0..mesh.num_elements() {
        let (x0, x1) = mesh.element(e);
        pieces.clear();
        pieces.push(x0);
        pieces.extend(breaks.iter().copied().filter(|&b| b > x0 && b < x1));
        pieces.push(x1);
        pieces.sort_by(|a, b| a.total_cmp(b));
        let dofs = mesh.element_dofs(e);
        for w in pieces.windows(2) {
            // evaluate g strictly inside the piece so indicator edges do not matter
            let (lo, hi) = (w[0], w[1]);
            for (p, dp) in dofs.iter().enumerate() {
                if let Some(i) = dp {
                    out[*i] += integrate(gauss5(), lo, hi, |x| g(x) * shapes((x - x0) / h)[p]);
                }
            }
        }
    }
    out
}

/// Dense stiffness matrix `A_ij = a(φ_i, φ_j)` of the integral fractional Laplacian
/// with homogeneous volume constraint.
///
/// The double integral over `D×D` is split into element pairs:
/// identical elements are integrated in closed form, touching elements via a
/// Duffy split of the shared-vertex singularity, and separated elements with
/// tensor Gauss rules. The interaction with the complement of `D` reduces to a
/// one-dimensional integral against `((x-a)^{-2s} + (b-x)^{-2s}) / 2s`.
pub fn assemble_fractional_stiffness(mesh: &FeMesh, s: f64) -> Result<DMatrix<f64>> {
    check_order(s)?;
    let n = mesh.dofs();
    let ne = mesh.num_elements();
    let h = mesh.h();
    let c = fractional_constant(s);
    let sl = slopes(h);
    let mut a = DMatrix::zeros(n, n);

    let add = |a: &mut DMatrix<f64>, i: Option<usize>, j: Option<usize>, v: f64| {
        if let (Some(i), Some(j)) = (i, j) {
            a[(i, j)] += v;
        }
    };

    // identical elements: (ψ(x)-ψ(z)) = ψ' (x-z), so the integrand is ψ_i'ψ_j' |x-z|^{1-2s}
    let self_int = 2.0 * h.powf(3.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
    for e in 0..ne {
        let dofs = mesh.element_dofs(e);
        for p in 0..2 {
            for q in 0..2 {
                add(&mut a, dofs[p], dofs[q], 0.5 * c * sl[p] * sl[q] * self_int);
            }
        }
    }

    // touching elements K=[v-h, v], L=[v, v+h]; x = v - p, z = v + r
    let moment = |k: i32| integrate(gauss32(), 0.0, 1.0, |t| t.powi(k) * (1.0 + t).powf(-1.0 - 2.0 * s));
    let (j0, j1, j2) = (moment(0), moment(1), moment(2));
    let pref = h.powf(3.0 - 2.0 * s) / (3.0 - 2.0 * s);
    let i_pp = pref * (j0 + j2);
    let i_pr = pref * 2.0 * j1;
    for e in 0..ne.saturating_sub(1) {
        // vertices e, e+1, e+2 with slopes on K (alpha) and L (beta)
        let vdofs = [
            mesh.element_dofs(e)[0],
            mesh.element_dofs(e)[1],
            mesh.element_dofs(e + 1)[1],
        ];
        let alpha = [sl[0], sl[1], 0.0];
        let beta = [0.0, sl[0], sl[1]];
        for p in 0..3 {
            for q in 0..3 {
                let v = alpha[p] * alpha[q] * i_pp
                    + (alpha[p] * beta[q] + beta[p] * alpha[q]) * i_pr
                    + beta[p] * beta[q] * i_pp;
                // both orderings (K,L) and (L,K) contribute equally
                add(&mut a, vdofs[p], vdofs[q], c * v);
            }
        }
    }

    // separated elements: moments depend only on the gap on a uniform mesh
    let rule = gauss16();
    for gap in 2..ne {
        let shift = gap as f64 * h;
        let mut kk = [[0.0; 2]; 2]; // ∫∫ N_p(x) N_q(x) k
        let mut kl = [[0.0; 2]; 2]; // ∫∫ N_p(x) N_q(z) k
        for &(tx, wx) in rule {
            let nx = shapes(tx);
            for &(tz, wz) in rule {
                let nz = shapes(tz);
                let r = (shift + (tz - tx) * h).abs();
                let k = wx * wz * h * h * r.powf(-1.0 - 2.0 * s);
                for p in 0..2 {
                    for q in 0..2 {
                        kk[p][q] += nx[p] * nx[q] * k;
                        kl[p][q] += nx[p] * nz[q] * k;
                    }
                }
            }
        }
        // mirroring ξ -> -ξ maps the right element onto a left one with the local
        // shape functions swapped, so ∫∫ N_p(z) N_q(z) k = kk[1-p][1-q]
        for e in 0..ne - gap {
            let f = e + gap;
            let dk = mesh.element_dofs(e);
            let dl = mesh.element_dofs(f);
            for p in 0..2 {
                for q in 0..2 {
                    // (φ_i(x)-φ_i(z))(φ_j(x)-φ_j(z)) on K×L, both orderings: factor 2 * C/2
                    add(&mut a, dk[p], dk[q], c * kk[p][q]);
                    add(&mut a, dl[p], dl[q], c * kk[1 - p][1 - q]);
                    add(&mut a, dk[p], dl[q], -c * kl[p][q]);
                    add(&mut a, dl[q], dk[p], -c * kl[p][q]);
                }
            }
        }
    }

    // interaction with the complement of D
    let (da, db) = (mesh.a(), mesh.b());
    for e in 0..ne {
        let (x0, x1) = mesh.element(e);
        let dofs = mesh.element_dofs(e);
        for p in 0..2 {
            for q in 0..2 {
                let (Some(i), Some(j)) = (dofs[p], dofs[q]) else { continue };
                let prod = |x: f64| {
                    let sh = shapes((x - x0) / h);
                    sh[p] * sh[q]
                };
                // on the first (last) element the only dof vanishes linearly at a (b):
                // the singular part ∫ (t/h)^2 t^{-2s} dt is done in closed form
                let left = if e == 0 {
                    h.powf(1.0 - 2.0 * s) / (3.0 - 2.0 * s)
                } else {
                    integrate(rule, x0, x1, |x| prod(x) * (x - da).powf(-2.0 * s))
                };
                let right = if e == ne - 1 {
                    h.powf(1.0 - 2.0 * s) / (3.0 - 2.0 * s)
                } else {
                    integrate(rule, x0, x1, |x| prod(x) * (db - x).powf(-2.0 * s))
                };
                a[(i, j)] += c * (left + right) / (2.0 * s);
            }
        }
    }

    // symmetrize exactly; both halves were accumulated from identical terms
    let sym = (&a + a.transpose()) * 0.5;
    Ok(sym)
}

/// Closed-form stiffness entries on an infinite uniform grid: the bilinear
/// form of two hats `m` cells apart equals a fourth difference of `|x|^{3-2s}`.
/// Used as an independent cross-check of the element-pair assembly.
pub fn toeplitz_stiffness_entry(h: f64, s: f64, m: usize) -> f64 {
    let eps = 1.0 - 2.0 * s;
    // fourth antiderivative of |x|^{-1-2s}, modulo polynomials of degree <= 3
    let g = |x: f64| -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let core = if eps.abs() < 1e-300 { x.ln() } else { (eps * x.ln()).exp_m1() / eps };
        x * x * core / ((-2.0 * s) * (2.0 - 2.0 * s) * (3.0 - 2.0 * s))
    };
    let binom = [1.0, -4.0, 6.0, -4.0, 1.0];
    let mut acc = 0.0;
    for (k, b) in binom.iter().enumerate() {
        let x = (m as f64 + k as f64 - 2.0) * h;
        acc += b * g(x.abs());
    }
    -fractional_constant(s) * acc / (h * h)
}
