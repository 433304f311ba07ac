//! Analytic solutions of the benchmark problems.

use std::f64::consts::PI;

use anyhow::{ensure, Result};
use gpmrt_core::Grid;

/// Anisotropic Gaussian hill `phi0 / (2 pi sqrt(det Y)) exp(-Y^{-1}:(x - u t)(x - u t) / 2)` with
/// `Y = y0^2 I + 2 kappa t`.
pub fn gauss_hill_exact(x: [f64; 2], t: f64, u: [f64; 2], kappa: [[f64; 2]; 2], y0: f64, phi0: f64) -> Result<f64> {
    let h = GaussHill::new(t, u, kappa, y0, phi0)?;
    Ok(h.eval([x[0] - u[0] * t, x[1] - u[1] * t]))
}

struct GaussHill {
    inv: [[f64; 2]; 2],
    amp: f64,
}

impl GaussHill {
    fn new(t: f64, _u: [f64; 2], kappa: [[f64; 2]; 2], y0: f64, phi0: f64) -> Result<Self> {
        let y = [
            [y0 * y0 + 2.0 * kappa[0][0] * t, 2.0 * kappa[0][1] * t],
            [2.0 * kappa[1][0] * t, y0 * y0 + 2.0 * kappa[1][1] * t],
        ];
        let det = y[0][0] * y[1][1] - y[0][1] * y[1][0];
        ensure!(y[0][0] > 0.0 && det > 0.0, "covariance y0^2 I + 2 kappa t is not positive definite at t = {t}");
        let inv = [[y[1][1] / det, -y[0][1] / det], [-y[1][0] / det, y[0][0] / det]];
        Ok(GaussHill { inv, amp: phi0 / (2.0 * PI * det.sqrt()) })
    }

    /// Value at displacement `r` from the centre.
    fn eval(&self, r: [f64; 2]) -> f64 {
        let q = self.inv[0][0] * r[0] * r[0] + (self.inv[0][1] + self.inv[1][0]) * r[0] * r[1] + self.inv[1][1] * r[1] * r[1];
        self.amp * (-0.5 * q).exp()
    }
}

/// Gaussian hill on a doubly periodic grid: the centre is wrapped into the domain and the
/// eight neighbouring periodic images are added.
pub fn gauss_hill_field(grid: &Grid, t: f64, u: [f64; 2], kappa: [[f64; 2]; 2], y0: f64, phi0: f64) -> Result<Vec<f64>> {
    let h = GaussHill::new(t, u, kappa, y0, phi0)?;
    let period = [grid.nx as f64 * grid.dx, grid.ny as f64 * grid.dx];
    let lo = grid.origin;
    let centre = [
        lo[0] + (u[0] * t - lo[0]).rem_euclid(period[0]),
        lo[1] + (u[1] * t - lo[1]).rem_euclid(period[1]),
    ];
    Ok((0..grid.len())
        .map(|s| {
            let p = grid.position(s);
            let mut v = 0.0;
            for ix in -1..=1 {
                for iy in -1..=1 {
                    let r = [p[0] - centre[0] + ix as f64 * period[0], p[1] - centre[1] + iy as f64 * period[1]];
                    v += h.eval(r);
                }
            }
            v
        })
        .collect())
}

/// Plane Poiseuille profile `4 U (1 - y/H) y/H`.
pub fn poiseuille_exact(y: f64, u_max: f64, h: f64) -> f64 {
    4.0 * u_max * (1.0 - y / h) * y / h
}

/// Centre-line velocity `G H^2 / (8 nu)` of a channel driven by acceleration G.
pub fn poiseuille_centre_velocity(g: f64, h: f64, nu: f64) -> f64 {
    g * h * h / (8.0 * nu)
}

/// `sin(pi (x - u t)) exp(-kappa pi^2 t)`.
pub fn cde1d_exact(x: f64, t: f64, u: f64, kappa: f64) -> f64 {
    (PI * (x - u * t)).sin() * (-kappa * PI * PI * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hill_starts_as_initial_gaussian() {
        let y0 = 0.01;
        let phi0 = 2.0 * PI * y0 * y0;
        let v = gauss_hill_exact([0.013, -0.004], 0.0, [0.3, 0.1], [[1e-3, 1e-3], [1e-3, 2e-3]], y0, phi0).unwrap();
        let r2 = 0.013f64.powi(2) + 0.004f64.powi(2);
        assert!((v - (-r2 / (2.0 * y0 * y0)).exp()).abs() < 1e-15);
    }

    #[test]
    fn isotropic_hill_is_a_product_of_heat_kernels() {
        let (y0, phi0, k, t, u) = (0.05, 1.3, 2e-3, 0.7, [0.2, -0.1]);
        let x = [0.11, 0.03];
        let v = gauss_hill_exact(x, t, u, [[k, 0.0], [0.0, k]], y0, phi0).unwrap();
        let var = y0 * y0 + 2.0 * k * t;
        let kern = |z: f64| (-z * z / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        let expect = phi0 * kern(x[0] - u[0] * t) * kern(x[1] - u[1] * t);
        assert!((v - expect).abs() < 1e-13 * expect);
    }

    #[test]
    fn hill_keeps_its_mass() {
        let (y0, phi0) = (0.05, 0.7);
        let g = Grid::periodic_2d(200, 200, 0.01, [-1.0, -1.0]).unwrap();
        let f = gauss_hill_field(&g, 1.5, [0.4, 0.1], [[1e-3, 5e-4], [5e-4, 2e-3]], y0, phi0).unwrap();
        let mass: f64 = f.iter().sum::<f64>() * 1e-4;
        assert!((mass - phi0).abs() < 1e-10);
    }

    #[test]
    fn negative_time_beyond_the_initial_width_is_rejected() {
        assert!(gauss_hill_exact([0.0, 0.0], -1.0, [0.0; 2], [[1e-3, 0.0], [0.0, 1e-3]], 0.01, 1.0).is_err());
    }

    #[test]
    fn poiseuille_profile() {
        assert_eq!(poiseuille_exact(0.5, 0.01, 1.0), 0.01);
        assert_eq!(poiseuille_exact(0.0, 0.01, 1.0), 0.0);
        assert_eq!(poiseuille_exact(1.0, 0.01, 1.0), 0.0);
        for nu in [0.02, 0.06, 0.1] {
            assert!((poiseuille_centre_velocity(0.08 * nu, 1.0, nu) - 0.01).abs() < 1e-17);
        }
    }

    #[test]
    fn cde_solution() {
        assert_eq!(cde1d_exact(0.3, 0.0, 1.0, 0.08), (0.3 * PI).sin());
        let amp = (-0.16 * PI * PI).exp();
        assert!((amp - 0.2062).abs() < 5e-5);
        assert!((cde1d_exact(0.5, 2.0, 0.0, 0.08) - amp).abs() < 1e-15);
        assert!((cde1d_exact(-1.0, 0.4, 1.0, 0.08) - cde1d_exact(1.0, 0.4, 1.0, 0.08)).abs() < 1e-15);
    }
}
