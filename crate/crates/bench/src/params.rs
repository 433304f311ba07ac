//! Parameter relations used to set up runs.

use anyhow::{bail, ensure, Result};
use nalgebra::DMatrix;

/// Propagation parameters (a, b) that realise the diffusion tensor `kappa` with a fixed
/// relaxation-time block `s1` and a fixed ratio `b = r a^2`.
///
/// From `kappa = chi cs2 dt [S1 + (b/(2a^2) - 1) I]` with `cs2 = (a dx/dt)^2 / 3`,
/// `a^2 = 3 kappa dt / (chi dx^2 (S1 + (r/2 - 1) I))`, which must hold entry-wise.
pub fn acoustic_ab_for_kappa(kappa: &DMatrix<f64>, dx: f64, dt: f64, s1: &DMatrix<f64>, chi: f64, r: f64) -> Result<(f64, f64)> {
    ensure!(kappa.shape() == s1.shape() && kappa.is_square(), "kappa and S1 must be square of equal size");
    ensure!(dx > 0.0 && dt > 0.0 && chi > 0.0, "dx, dt and chi must be positive");
    let d = kappa.nrows();
    let m = s1 + DMatrix::identity(d, d) * (0.5 * r - 1.0);
    // the largest entry of m fixes a^2; every other entry must agree with it
    let (mut pi, mut pj) = (0, 0);
    for i in 0..d {
        for j in 0..d {
            if m[(i, j)].abs() > m[(pi, pj)].abs() {
                (pi, pj) = (i, j);
            }
        }
    }
    ensure!(m[(pi, pj)] != 0.0, "S1 + (r/2 - 1) I vanishes");
    let a2 = 3.0 * kappa[(pi, pj)] * dt / (chi * dx * dx * m[(pi, pj)]);
    let scale = kappa.amax();
    for i in 0..d {
        for j in 0..d {
            let k = a2 * chi * dx * dx / (3.0 * dt) * m[(i, j)];
            if (k - kappa[(i, j)]).abs() > 1e-12 * scale {
                bail!("kappa is not proportional to S1 + (r/2 - 1) I; no single a realises it");
            }
        }
    }
    ensure!(a2 > 0.0, "kappa and S1 + (r/2 - 1) I have opposite signs");
    let a = a2.sqrt();
    if a > 1.0 {
        bail!("infeasible: a = {a} exceeds 1 for dx = {dx}");
    }
    Ok((a, r * a2))
}
