//! Fourth-order D1Q3 model for the linear convection-diffusion equation: parameter conditions,
//! the closed-form three-level scheme coefficients, and von Neumann stability.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, RelaxationMatrix, TransformMatrix};
use crate::model::ModelSpec;
use crate::models::NacdeModel;
use crate::stencil::{propagation_weights, PropagationCheck};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourthOrderParams {
    pub s1: f64,
    pub s2: f64,
    pub w0: f64,
}

impl FourthOrderParams {
    /// Strictly inside the validity box (with a small margin so boundary roots are rejected).
    pub fn in_box(&self) -> bool {
        const M: f64 = 1e-6;
        self.s1 > M && self.s1 < 2.0 - M && self.s2 > M && self.s2 < 2.0 - M && self.w0 > M && self.w0 < 1.0 - M
    }
}

/// A solved fourth-order design point.
#[derive(Debug, Clone, Copy)]
pub struct FourthOrderDesign {
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub params: FourthOrderParams,
    pub vartheta: f64,
}

impl FourthOrderDesign {
    pub fn solve(a: f64, b: f64, eps: f64) -> Result<Self> {
        let params = solve_fourth_order(a, b, eps, None)?.params;
        Ok(FourthOrderDesign { eps, a, b, params, vartheta: vartheta(a, b, params.s1, params.w0) })
    }
}

/// Closed-form solution for a = b = 1.
pub fn closed_form_a1b1(eps: f64) -> Result<FourthOrderParams> {
    let p = FourthOrderParams {
        s1: 12.0 * eps / (6.0 * eps + 1.0),
        s2: 2.0 / (6.0 * eps + 1.0),
        w0: 1.0 - 12.0 * eps * eps,
    };
    if !(eps > 0.0) || !p.in_box() {
        return Err(Error::Infeasible(format!(
            "eps = {eps} gives parameters outside the admissible box: {p:?}"
        )));
    }
    Ok(p)
}

/// Residuals of (eps relation, TR3, TR4).
pub fn residuals(a: f64, b: f64, eps: f64, p: &FourthOrderParams) -> [f64; 3] {
    let (s1, s2, w0) = (p.s1, p.s2, p.w0);
    let a2 = a * a;
    let a4 = a2 * a2;
    let r_eps = a2 * (1.0 / s1 + b / (2.0 * a2) - 1.0) * (1.0 - w0) - eps;
    let tr3 = s1 * s1 * s2 * (1.0 - 3.0 * b)
        + 12.0 * a2 * s2 * (s1 - 1.0)
        + 3.0 * w0
            * (2.0 * a2 * (s1 + 2.0 * s2 + s1 * s1 * (s2 - 1.0) - 3.0 * s1 * s2)
                + b * s1 * (s1 * (1.0 - s2) + s2));
    let s13 = s1 * s1 * s1;
    let tr4 = 6.0 * a4 * s2 * (6.0 * s1 - 4.0 - 2.0 * s13)
        + b * s13 * s2 * (1.0 - 3.0 * b)
        + 8.0 * a2 * s1 * s1 * s2 * (1.0 - s1) * (1.0 - 3.0 * b)
        + 6.0 * a4 * w0 * (4.0 * (s1 + s2 + s13 + 2.0 * s1 * s1 * (s2 - 1.0)) - 10.0 * s1 * s2 - 2.0 * s13 * s2)
        + 3.0 * b * b * s13 * w0 * (2.0 - s2)
        + 12.0 * a2 * b * s1 * w0 * (2.0 * s1 * (1.0 - s1) + s2 * ((s1 - 2.0) * s1 + 1.0));
    [r_eps, tr3, tr4]
}

fn res_norm(r: &[f64; 3]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy)]
pub struct FourthOrderSolution {
    pub params: FourthOrderParams,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton from one starting point; `None` when it fails or leaves the box.
fn newton(a: f64, b: f64, eps: f64, start: FourthOrderParams) -> Option<FourthOrderSolution> {
    let mut x = Vector3::new(start.s1, start.s2, start.w0);
    let to_p = |x: &Vector3<f64>| FourthOrderParams { s1: x[0], s2: x[1], w0: x[2] };
    let mut r = residuals(a, b, eps, &to_p(&x));
    for it in 0..100 {
        let rn = res_norm(&r);
        if rn < 1e-14 {
            let p = to_p(&x);
            return p.in_box().then_some(FourthOrderSolution { params: p, residual: rn, iterations: it });
        }
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let h = 1e-7 * x[k].abs().max(1e-3);
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let rp = residuals(a, b, eps, &to_p(&xp));
            let rm = residuals(a, b, eps, &to_p(&xm));
            for e in 0..3 {
                jac[(e, k)] = (rp[e] - rm[e]) / (2.0 * h);
            }
        }
        let dx = jac.lu().solve(&-Vector3::from_column_slice(&r))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn = x + dx * t;
            // keep iterates inside the closed box so the eps relation stays finite
            let inside = xn[0] > 1e-8 && xn[0] < 2.0 && xn[1] > -1e-8 && xn[1] < 2.0 && xn[2] > -1e-8 && xn[2] < 1.0;
            if inside {
                let rn_new = residuals(a, b, eps, &to_p(&xn));
                if res_norm(&rn_new) < (1.0 - 1e-4 * t) * rn || res_norm(&rn_new) < 1e-14 {
                    x = xn;
                    r = rn_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let p = to_p(&x);
    let rn = res_norm(&r);
    (rn < 1e-12 && p.in_box()).then_some(FourthOrderSolution { params: p, residual: rn, iterations: 100 })
}

/// All distinct admissible roots found from an 8 x 8 x 8 grid of starting points.
pub fn all_roots(a: f64, b: f64, eps: f64) -> Vec<FourthOrderSolution> {
    let mut out: Vec<FourthOrderSolution> = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            for k in 0..8 {
                let start = FourthOrderParams {
                    s1: 2.0 * (i as f64 + 0.5) / 8.0,
                    s2: 2.0 * (j as f64 + 0.5) / 8.0,
                    w0: (k as f64 + 0.5) / 8.0,
                };
                if let Some(sol) = newton(a, b, eps, start) {
                    let dup = out.iter().any(|o| {
                        (o.params.s1 - sol.params.s1).abs() < 1e-8
                            && (o.params.s2 - sol.params.s2).abs() < 1e-8
                            && (o.params.w0 - sol.params.w0).abs() < 1e-8
                    });
                    if !dup {
                        out.push(sol);
                    }
                }
            }
        }
    }
    out.sort_by(|x, y| x.params.s1.partial_cmp(&y.params.s1).unwrap());
    out
}

/// Solve the fourth-order conditions for (s1, s2, w0).
///
/// Newton starts from `guess` (default: the a = b = 1 closed form when it exists). If that
/// fails, the multi-start root set is searched and the root closest to the guess is returned.
pub fn solve_fourth_order(a: f64, b: f64, eps: f64, guess: Option<FourthOrderParams>) -> Result<FourthOrderSolution> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let guess = guess.or_else(|| closed_form_a1b1(eps).ok());
    if let Some(g) = guess {
        if let Some(sol) = newton(a, b, eps, g) {
            return Ok(sol);
        }
    }
    let roots = all_roots(a, b, eps);
    let reference = guess.unwrap_or(FourthOrderParams { s1: 1.0, s2: 1.0, w0: 0.5 });
    roots
        .into_iter()
        .min_by(|x, y| {
            let d = |p: &FourthOrderParams| {
                (p.s1 - reference.s1).powi(2) + (p.s2 - reference.s2).powi(2) + (p.w0 - reference.w0).powi(2)
            };
            d(&x.params).partial_cmp(&d(&y.params)).unwrap()
        })
        .ok_or_else(|| Error::Infeasible(format!("no admissible root for (a, b, eps) = ({a}, {b}, {eps})")))
}

/// Coefficient of the u^2 term in the equilibrium: zeta * xi.
pub fn vartheta(a: f64, b: f64, s1: f64, w0: f64) -> f64 {
    let zeta = 2.0 * (1.0 - w0) / w0;
    let xi = (1.0 / s1 - 0.5) / (1.0 / s1 + b / (2.0 * a * a) - 1.0);
    zeta * xi
}

/// D1Q3 model for `phi_t + u phi_x = kappa phi_xx` with the given fourth-order parameters.
/// `lambda = dx / dt`. (a, b) outside `a^2 <= b <= 1` are accepted here.
pub fn cde_model(a: f64, b: f64, p: &FourthOrderParams, u: f64, lambda: f64, dt: f64) -> Result<ModelSpec> {
    let lat = Lattice::d1q3(lambda, a, p.w0)?;
    let t = TransformMatrix::orthogonal_d1q3(lat.c())?;
    let s = RelaxationMatrix::diagonal(&[1.0, p.s1, p.s2], &t)?;
    let closure = NacdeModel::cde_1d(u, vartheta(a, b, p.s1, p.w0));
    ModelSpec::with_check(lat, t, s, b, dt, Arc::new(closure), PropagationCheck::Unchecked)
}

/// Closed-form coefficients of `phi_j^{n+1} = sum alpha_k phi^n + beta_k phi^{n-1} + gamma_k phi^{n-2}`.
///
/// Offsets: alpha (0, -1, +1); beta and gamma (0, -1, +1, -2, +2).
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormCoefficients {
    pub alpha: [f64; 3],
    pub beta: [f64; 5],
    pub gamma: [f64; 5],
}

impl ClosedFormCoefficients {
    pub const ALPHA_OFFSETS: [i32; 3] = [0, -1, 1];
    pub const BETA_OFFSETS: [i32; 5] = [0, -1, 1, -2, 2];
    pub const GAMMA_OFFSETS: [i32; 5] = [0, -1, 1, -2, 2];
}

/// How the ambiguous printed slots are filled.
pub const CLOSED_FORM_RESOLUTION: &str = "prefactor 1/(c^2 (b s1 - 2 a^2 s1 + 2 a^2)); \
     beta3 = beta2 with u -> -u; beta4 = beta5 = (b^2 - a^2)(s1 - 1)/4 [(1 - s2 w0) + a^2 s2 (2 - s1) u^2 P]; \
     gamma1 = (s1 - 1)(s2 - 1)(2a^2 + 6b^2 - 8b + 4)/4";

fn alpha_beta_raw(a: f64, b: f64, s1: f64, s2: f64, w0: f64, c: f64, u: f64) -> ([f64; 3], f64, f64) {
    let (a2, a3, a4) = (a * a, a * a * a, a * a * a * a);
    let (b2, b3) = (b * b, b * b * b);
    let c2 = c * c;
    let u2 = u * u;
    let s12 = s1 * s1;
    let p = 1.0 / (c2 * (b * s1 - 2.0 * a2 * s1 + 2.0 * a2));

    let alpha1 = p
        * (6.0 * a2 * c2 - 4.0 * a2 * b * c2 - 8.0 * a2 * c2 * s1 - 2.0 * a2 * c2 * s2 - b * c2 * s12
            - 2.0 * b2 * c2 * s1
            + 2.0 * a2 * c2 * s12
            + b2 * c2 * s12
            + 3.0 * b * c2 * s1
            - 2.0 * a2 * b * c2 * s12
            - b * c2 * s1 * s2
            + 6.0 * a2 * b * c2 * s1
            + 2.0 * a2 * c2 * s1 * s2
            - 2.0 * a2 * b * s2 * u2
            + 2.0 * a2 * b * c2 * s2 * w0
            + a2 * b * s1 * s2 * u2
            + b2 * c2 * s1 * s2 * w0
            - 2.0 * a2 * b * c2 * s1 * s2 * w0);
    let alpha2 = 0.5
        * p
        * (4.0 * a2 * b * c2 + 2.0 * b2 * c2 * s1 - b2 * c2 * s12 + 2.0 * a2 * b * c2 * s12 + 2.0 * a3 * c * s1 * u
            - 6.0 * a2 * b * c2 * s1
            + 2.0 * a2 * b * s2 * u2
            - 2.0 * a3 * c * s12 * u
            - 2.0 * a2 * b * c2 * s2 * w0
            - a2 * b * s1 * s2 * u2
            - b2 * c2 * s1 * s2 * w0
            + a * b * c * s12 * u
            + 2.0 * a2 * b * c2 * s1 * s2 * w0);
    let alpha3 = -0.5
        * p
        * (b2 * c2 * s12 - 2.0 * b2 * c2 * s1 - 4.0 * a2 * b * c2 - 2.0 * a2 * b * c2 * s12 + 2.0 * a3 * c * s1 * u
            + a * b * c * s12 * u
            - 2.0 * a2 * b * c2 * s1 * s2 * w0
            + 6.0 * a2 * b * c2 * s1
            - 2.0 * a2 * b * s2 * u2
            - 2.0 * a3 * c * s12 * u
            + 2.0 * a2 * b * c2 * s2 * w0
            + a2 * b * s1 * s2 * u2
            + b2 * c2 * s1 * s2 * w0);
    let beta1 = -0.5
        * p
        * (12.0 * a2 * c2 + 2.0 * a4 * c2 - 16.0 * a2 * b * c2 - 20.0 * a2 * c2 * s1 - 8.0 * a2 * c2 * s2
            - 4.0 * a4 * c2 * s1
            - 4.0 * b * c2 * s12
            - 8.0 * b2 * c2 * s1
            + 3.0 * b3 * c2 * s1
            + 2.0 * a4 * s2 * u2
            + 6.0 * a2 * b2 * c2
            + 8.0 * a2 * c2 * s12
            + 2.0 * a4 * c2 * s12
            + 6.0 * b2 * c2 * s12
            - 3.0 * b3 * c2 * s12
            + 6.0 * b * c2 * s1
            - 13.0 * a2 * b * c2 * s12
            - 12.0 * a2 * b2 * c2 * s1
            - 4.0 * a2 * c2 * s12 * s2
            + 6.0 * a2 * b2 * s2 * u2
            - 2.0 * b2 * c2 * s12 * s2
            + a4 * s12 * s2 * u2
            - 4.0 * b * c2 * s1 * s2
            + 6.0 * a2 * b2 * c2 * s12
            + 29.0 * a2 * b * c2 * s1
            + 8.0 * a2 * b * c2 * s2
            + 12.0 * a2 * c2 * s1 * s2
            - 4.0 * a2 * b * s2 * u2
            + 2.0 * b * c2 * s12 * s2
            + 4.0 * b2 * c2 * s1 * s2
            - 2.0 * a4 * c2 * s2 * w0
            - 3.0 * a4 * s1 * s2 * u2
            + 4.0 * a2 * b * c2 * s2 * w0
            + 6.0 * a2 * b * s1 * s2 * u2
            + 4.0 * a4 * c2 * s1 * s2 * w0
            + 2.0 * b2 * c2 * s1 * s2 * w0
            - 3.0 * b3 * c2 * s1 * s2 * w0
            - 6.0 * a2 * b2 * c2 * s2 * w0
            - 2.0 * a2 * b * s12 * s2 * u2
            - 9.0 * a2 * b2 * s1 * s2 * u2
            - 2.0 * a4 * c2 * s12 * s2 * w0
            - 2.0 * b2 * c2 * s12 * s2 * w0
            + 3.0 * a2 * b2 * s12 * s2 * u2
            + 5.0 * a2 * b * c2 * s12 * s2 * w0
            + 12.0 * a2 * b2 * c2 * s1 * s2 * w0
            - 6.0 * a2 * b2 * c2 * s12 * s2 * w0
            - 9.0 * a2 * b * c2 * s1 * s2 * w0
            + 4.0 * a2 * b * c2 * s12 * s2
            - 12.0 * a2 * b * c2 * s1 * s2
            + 3.0 * b3 * c2 * s12 * s2 * w0);
    let beta_long = (b2 - a2) * (s1 - 1.0) * 0.25 * ((1.0 - s2 * w0) + p * a2 * s2 * (2.0 - s1) * u2);
    ([alpha1, alpha2, alpha3], beta1, beta_long)
}

fn beta2_raw(a: f64, b: f64, s1: f64, s2: f64, w0: f64, c: f64, u: f64) -> f64 {
    let (a2, a3) = (a * a, a * a * a);
    let (b2, b3) = (b * b, b * b * b);
    let c2 = c * c;
    let u2 = u * u;
    let s12 = s1 * s1;
    let p = 1.0 / (c2 * (b * s1 - 2.0 * a2 * s1 + 2.0 * a2));
    0.5 * p
        * (2.0 * b3 * c2 * s1 - 4.0 * b2 * c2 * s1 - 8.0 * a2 * b * c2 + 4.0 * a2 * b2 * c2
            - 4.0 * a2 * b2 * c2 * s12 * s2 * w0
            - 4.0 * a2 * b * c2 * s1 * s2 * w0
            + 3.0 * b2 * c2 * s12
            - 2.0 * b3 * c2 * s12
            - 6.0 * a2 * b * c2 * s12
            - 8.0 * a2 * b2 * c2 * s1
            + 4.0 * a2 * b2 * s2 * u2
            - b2 * c2 * s12 * s2
            + 4.0 * a2 * b2 * c2 * s12
            + 14.0 * a2 * b * c2 * s1
            + 4.0 * a2 * b * c2 * s2
            - 2.0 * a2 * b * s2 * u2
            + 2.0 * b2 * c2 * s1 * s2
            + 2.0 * a3 * c * s12 * u
            + 2.0 * a2 * b * c2 * s2 * w0
            + 3.0 * a2 * b * s1 * s2 * u2
            - 2.0 * a3 * c * s12 * s2 * u
            + b2 * c2 * s1 * s2 * w0
            - 2.0 * b3 * c2 * s1 * s2 * w0
            - 4.0 * a2 * b2 * c2 * s2 * w0
            - a2 * b * s12 * s2 * u2
            - 6.0 * a2 * b2 * s1 * s2 * u2
            - b2 * c2 * s12 * s2 * w0
            + 2.0 * b3 * c2 * s12 * s2 * w0
            - 6.0 * a2 * b * c2 * s1 * s2
            + 2.0 * a3 * c * s1 * s2 * u
            + 2.0 * a2 * b2 * s12 * s2 * u2
            + 2.0 * a2 * b * c2 * s12 * s2 * w0
            + 8.0 * a2 * b2 * c2 * s1 * s2 * w0
            - 2.0 * a3 * c * s1 * u
            + 2.0 * a2 * b * c2 * s12 * s2
            - a * b * c * s12 * u
            + a * b * c * s12 * s2 * u)
}

/// Evaluate the closed forms with the slot resolution in [`CLOSED_FORM_RESOLUTION`].
pub fn closed_form_coefficients(
    a: f64,
    b: f64,
    s1: f64,
    s2: f64,
    w0: f64,
    c: f64,
    u: f64,
) -> Result<ClosedFormCoefficients> {
    let den = b * s1 - 2.0 * a * a * s1 + 2.0 * a * a;
    if den.abs() < 1e-12 || c == 0.0 {
        return Err(Error::Parameter(format!("degenerate prefactor: b s1 - 2a^2 s1 + 2a^2 = {den:e}")));
    }
    let (alpha, beta1, beta_long) = alpha_beta_raw(a, b, s1, s2, w0, c, u);
    let beta2 = beta2_raw(a, b, s1, s2, w0, c, u);
    let beta3 = beta2_raw(a, b, s1, s2, w0, c, -u);
    let g = (s1 - 1.0) * (s2 - 1.0);
    let g1 = g * (2.0 * a * a + 6.0 * b * b - 8.0 * b + 4.0) / 4.0;
    let g2 = g * (b - b * b);
    let g4 = g * (b * b - a * a) / 4.0;
    Ok(ClosedFormCoefficients { alpha, beta: [beta1, beta2, beta3, beta_long, beta_long], gamma: [g1, g2, g2, g4, g4] })
}

/// Linear amplification matrix of the D1Q3 model at wavenumber theta (u given relative to c).
pub fn amplification_matrix(a: f64, b: f64, p: &FourthOrderParams, u_over_c: f64, theta: f64) -> Matrix3<Complex64> {
    let e = [0.0, 1.0, -1.0];
    let cs2 = 1.0 - p.w0; // in units of c^2
    let w = [p.w0, 0.5 * (1.0 - p.w0), 0.5 * (1.0 - p.w0)];
    let vt = vartheta(a, b, p.s1, p.w0);
    let u = u_over_c;
    let eqc: Vec<f64> =
        (0..3).map(|i| w[i] * (1.0 + e[i] * u / cs2 + vt * u * u * (e[i] * e[i] - cs2) / (2.0 * cs2 * cs2))).collect();
    let m = Matrix3::new(1.0, 1.0, 1.0, 0.0, 1.0, -1.0, -2.0, 1.0, 1.0);
    let minv = m.try_inverse().expect("D1Q3 transform is invertible");
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, p.s1, p.s2));
    let lam = minv * s * m;
    // post-collision map: f* = (I - Lam) f + Lam E 1^T f
    let mut g = Matrix3::identity() - lam;
    for i in 0..3 {
        for k in 0..3 {
            g[(i, k)] += (0..3).map(|l| lam[(i, l)] * eqc[l]).sum::<f64>();
        }
    }
    let (p0, pm, pp) = propagation_weights(a, b);
    let mut out = Matrix3::<Complex64>::zeros();
    for i in 0..3 {
        let t = Complex64::new(p0, 0.0)
            + Complex64::from_polar(pm, -theta * e[i])
            + Complex64::from_polar(pp, theta * e[i]);
        for k in 0..3 {
            out[(i, k)] = t * g[(i, k)];
        }
    }
    out
}

/// Spectral radius of a complex 3x3 matrix through its characteristic cubic.
pub fn spectral_radius3(m: &Matrix3<Complex64>) -> f64 {
    eigenvalues3(m).iter().fold(0.0, |r, z| r.max(z.norm()))
}

/// Eigenvalues of a complex 3x3 matrix (Durand-Kerner on the characteristic cubic, polished).
pub fn eigenvalues3(m: &Matrix3<Complex64>) -> [Complex64; 3] {
    // det(x I - M) = x^3 - t x^2 + k x - d
    let t = m.trace();
    let k = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let d = m.determinant();
    let poly = |x: Complex64| ((x - t) * x + k) * x - d;
    let scale = 1.0 + t.norm().max(k.norm().sqrt()).max(d.norm().cbrt());
    let mut z = [
        Complex64::from_polar(scale, 0.4),
        Complex64::from_polar(scale, 0.4 + 2.0944),
        Complex64::from_polar(scale, 0.4 + 4.18879),
    ];
    for _ in 0..500 {
        let mut delta: f64 = 0.0;
        for i in 0..3 {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..3 {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                continue;
            }
            let step = poly(z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-16 * scale {
            break;
        }
    }
    z
}

/// Maximum spectral radius over theta in [0, pi]: 720 samples refined by golden-section search.
pub fn max_amplification(a: f64, b: f64, p: &FourthOrderParams, u_over_c: f64) -> (f64, f64) {
    let n = 720;
    let rho = |th: f64| spectral_radius3(&amplification_matrix(a, b, p, u_over_c, th));
    let pi = std::f64::consts::PI;
    let samples: Vec<f64> = (0..=n).map(|k| rho(pi * k as f64 / n as f64)).collect();
    let (kbest, _) = samples.iter().enumerate().fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let h = pi / n as f64;
    let (mut lo, mut hi) = ((kbest as f64 - 1.0) * h, (kbest as f64 + 1.0) * h);
    lo = lo.max(0.0);
    hi = hi.min(pi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (rho(x1), rho(x2));
    for _ in 0..60 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = rho(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = rho(x2);
        }
    }
    let refined = f1.max(f2);
    if refined > samples[kbest] {
        (refined, 0.5 * (x1 + x2))
    } else {
        (samples[kbest], kbest as f64 * h)
    }
}

/// Populations (direction-major) on a periodic line whose LB trajectory reproduces the given
/// first three levels of the conserved field exactly.
///
/// Works mode by mode: `levels[m]` must be phi at t = m dt. Modes where the 3x3 Krylov system
/// `(1^T, 1^T G, 1^T G^2)` is singular (the mean mode) fall back to the equilibrium.
pub fn consistent_populations(
    a: f64,
    b: f64,
    p: &FourthOrderParams,
    u_over_c: f64,
    levels: &[Vec<f64>; 3],
) -> Vec<f64> {
    let n = levels[0].len();
    let e = [0.0, 1.0, -1.0];
    let cs2 = 1.0 - p.w0;
    let w = [p.w0, 0.5 * (1.0 - p.w0), 0.5 * (1.0 - p.w0)];
    let vt = vartheta(a, b, p.s1, p.w0);
    let eqc: Vec<f64> = (0..3)
        .map(|i| w[i] * (1.0 + e[i] * u_over_c / cs2 + vt * u_over_c.powi(2) * (e[i] * e[i] - cs2) / (2.0 * cs2 * cs2)))
        .collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let hat = |f: &[f64], k: usize| -> Complex64 {
        (0..n).map(|j| Complex64::from_polar(f[j], -two_pi * ((j * k) % n) as f64 / n as f64)).sum()
    };
    let mut fhat = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for (k, fk) in fhat.iter_mut().enumerate() {
        let rhs = nalgebra::Vector3::new(hat(&levels[0], k), hat(&levels[1], k), hat(&levels[2], k));
        let theta = two_pi * k as f64 / n as f64;
        let g = amplification_matrix(a, b, p, u_over_c, theta);
        let one = nalgebra::RowVector3::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        let r1 = one * g;
        let r2 = r1 * g;
        let mut kry = Matrix3::<Complex64>::zeros();
        kry.set_row(0, &one);
        kry.set_row(1, &r1);
        kry.set_row(2, &r2);
        // a mode invisible in phi makes the system rank-deficient; the pseudo-inverse then
        // fits the three levels in the least-squares sense
        let solved = if k == 0 {
            None
        } else {
            let svd = kry.svd(true, true);
            let cut = KRYLOV_RCOND * svd.singular_values[0];
            svd.solve(&rhs, cut).ok()
        };
        match solved {
            Some(x) if x.iter().all(|z| z.is_finite()) => *fk = [x[0], x[1], x[2]],
            _ => *fk = [rhs[0] * eqc[0], rhs[0] * eqc[1], rhs[0] * eqc[2]],
        }
    }
    let mut out = vec![0.0; 3 * n];
    for i in 0..3 {
        for j in 0..n {
            let v: Complex64 = (0..n)
                .map(|k| fhat[k][i] * Complex64::from_polar(1.0, two_pi * ((j * k) % n) as f64 / n as f64))
                .sum();
            out[i * n + j] = v.re / n as f64;
        }
    }
    out
}

pub const STABILITY_TOL: f64 = 1e-10;

/// Relative singular-value cutoff of the consistent start-up solve.
const KRYLOV_RCOND: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct StabilityPoint {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub u_over_c: f64,
    pub max_rho: f64,
    pub stable: bool,
}

/// Von Neumann scan over eps and u/c using the fourth-order parameters at each eps.
/// Points where the conditions have no admissible root are skipped.
pub fn stability_region(a: f64, b: f64, eps_values: &[f64], u_values: &[f64]) -> Vec<StabilityPoint> {
    let mut out = Vec::new();
    let mut guess: Option<FourthOrderParams> = None;
    for &eps in eps_values {
        let Ok(sol) = solve_fourth_order(a, b, eps, guess.or_else(|| closed_form_a1b1(eps).ok())) else {
            continue;
        };
        guess = Some(sol.params);
        for &u in u_values {
            let (r, _) = max_amplification(a, b, &sol.params, u);
            out.push(StabilityPoint { a, b, eps, u_over_c: u, max_rho: r, stable: r <= 1.0 + STABILITY_TOL });
        }
    }
    out
}

pub fn stability_csv(points: &[StabilityPoint]) -> String {
    let mut s = String::from("a,b,eps,u_over_c,max_rho,stable\n");
    for p in points {
        s.push_str(&format!("{},{},{},{},{},{}\n", p.a, p.b, p.eps, p.u_over_c, p.max_rho, p.stable));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_solves_conditions() {
        for &eps in &[0.05, 0.1, 0.16, 0.25, 0.28] {
            let p = closed_form_a1b1(eps).unwrap();
            let r = residuals(1.0, 1.0, eps, &p);
            assert!(res_norm(&r) < 1e-13, "eps {eps}: {r:?}");
        }
        assert!(closed_form_a1b1(0.3).is_err());
    }

    #[test]
    fn newton_recovers_closed_form() {
        let sol = solve_fourth_order(1.0, 1.0, 0.16, None).unwrap();
        let p = closed_form_a1b1(0.16).unwrap();
        assert!((sol.params.s1 - p.s1).abs() < 1e-12);
        assert!((sol.params.s2 - p.s2).abs() < 1e-12);
        assert!((sol.params.w0 - p.w0).abs() < 1e-12);
    }

    #[test]
    fn eigen_solver_matches_diagonal() {
        let m = Matrix3::from_diagonal(&Vector3::new(
            Complex64::new(0.5, 0.1),
            Complex64::new(-0.3, 0.0),
            Complex64::new(0.0, 0.9),
        ));
        let r = spectral_radius3(&m);
        assert!((r - 0.9).abs() < 1e-14);
    }

    #[test]
    fn zero_wavenumber_keeps_mass() {
        let p = closed_form_a1b1(0.1).unwrap();
        let g = amplification_matrix(1.0, 1.0, &p, 0.05, 0.0);
        let ev = eigenvalues3(&g);
        assert!(ev.iter().any(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-14), "{ev:?}");
    }

    #[test]
    fn printed_closed_form_points() {
        let p = closed_form_a1b1(0.25).unwrap();
        assert!((p.s1 - 1.2).abs() < 1e-15 && (p.s2 - 0.8).abs() < 1e-15 && (p.w0 - 0.25).abs() < 1e-15);
        let p = closed_form_a1b1(1.0 / 6.0).unwrap();
        assert!((p.s1 - 1.0).abs() < 1e-15 && (p.s2 - 1.0).abs() < 1e-15 && (p.w0 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn generic_point_is_not_fourth_order() {
        let r = residuals(1.0, 1.0, 0.0, &FourthOrderParams { s1: 1.0, s2: 1.0, w0: 1.0 / 3.0 });
        assert!((r[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn general_ab_root_satisfies_conditions() {
        let sol = solve_fourth_order(0.6, 0.6, 0.1, None).unwrap();
        let r = residuals(0.6, 0.6, 0.1, &sol.params);
        assert!(res_norm(&r) < 1e-10, "{r:?}");
        assert!(sol.params.in_box());
    }

    #[test]
    fn infeasible_eps_is_reported() {
        assert!(matches!(solve_fourth_order(0.6, 0.6, 0.05, None), Err(Error::Infeasible(_))));
        assert!(matches!(solve_fourth_order(0.6, 0.9, 0.25, None), Err(Error::Infeasible(_))));
    }

    #[test]
    fn scan_flags_unstable_point() {
        let p = closed_form_a1b1(0.28).unwrap();
        assert!(max_amplification(1.0, 1.0, &p, 0.0).0 <= 1.0 + STABILITY_TOL);
        assert!(max_amplification(1.0, 1.0, &p, 0.3).0 > 1.0 + 1e-3);
        let pts = stability_region(1.0, 1.0, &[0.1, 0.28], &[0.0, 0.3]);
        assert_eq!(pts.len(), 4);
        assert!(pts[..3].iter().all(|p| p.stable) && !pts[3].stable);
        assert!(stability_csv(&pts).starts_with("a,b,eps,u_over_c,max_rho,stable\n"));
    }

    #[test]
    fn rank_deficient_start_is_a_least_squares_fit() {
        use crate::{Grid, LbSolver};
        // at a = b = 1 one LB mode never reaches phi, so three levels can only be fitted
        let (u, dx, dt) = (1.0, 0.1, 0.02);
        let p = solve_fourth_order(1.0, 1.0, 0.16, None).unwrap().params;
        let m = cde_model(1.0, 1.0, &p, u, dx / dt, dt).unwrap();
        let g = Grid::periodic_1d(20, dx, -1.0).unwrap();
        let lv = |t: f64| -> Vec<f64> {
            (0..20).map(|s| (std::f64::consts::PI * (g.position(s)[0] - u * t)).sin() * (-0.08 * 9.8696 * t).exp()).collect()
        };
        let levels = [lv(0.0), lv(dt), lv(2.0 * dt)];
        let f = consistent_populations(1.0, 1.0, &p, u * dt / dx, &levels);
        assert!(f.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        let mut lb = LbSolver::from_populations(m, g, f).unwrap();
        for lvl in &levels {
            let c = lb.conserved();
            let d = c[0].iter().zip(lvl).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d < 5e-5, "{d:e}");
            lb.run(1).unwrap();
        }
    }

    #[test]
    fn consistent_start_reproduces_levels() {
        use crate::{Grid, LbSolver};
        let (a, b, u, dx, dt) = (0.9, 0.8, 1.0, 0.1, 0.02);
        let p = solve_fourth_order(a, b, 0.08 * dt / (dx * dx), None).unwrap().params;
        let m = cde_model(a, b, &p, u, dx / dt, dt).unwrap();
        let g = Grid::periodic_1d(20, dx, -1.0).unwrap();
        let lv = |t: f64| -> Vec<f64> {
            (0..20).map(|s| (std::f64::consts::PI * (g.position(s)[0] - u * t)).sin() * (-0.3 * t).exp() + 0.2).collect()
        };
        let levels = [lv(0.0), lv(dt), lv(2.0 * dt)];
        let f = consistent_populations(a, b, &p, u * dt / (a * dx), &levels);
        let mut lb = LbSolver::from_populations(m, g.clone(), f).unwrap();
        for lvl in &levels {
            let c = lb.conserved();
            let d = c[0].iter().zip(lvl).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d < 1e-11, "{d:e}");
            lb.run(1).unwrap();
        }
    }
}
