//! Equilibria, sources and parameter maps for the advection-diffusion and Navier-Stokes models.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::gradient;
use crate::lattice::{Lattice, TransformMatrix};
use crate::model::{Closure, ClosureContext, LinearClosure};
use crate::stencil::Stencil;

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

/// Equilibrium of the advection-diffusion model:
/// `w_i [phi + c_i.B/cs2 + (chi cs2 D + C - cs2 phi I):(c_i c_i - cs2 I)/(2 cs2^2)]`.
pub fn nacde_equilibrium(lattice: &Lattice, phi: f64, b: Vec2, d: Mat2, c: Mat2, chi: f64, out: &mut [f64]) {
    let cs2 = lattice.cs2();
    let dim = lattice.dim();
    let mut x = [[0.0; 2]; 2];
    for a in 0..dim {
        for g in 0..dim {
            x[a][g] = chi * cs2 * d[a][g] + c[a][g] - if a == g { cs2 * phi } else { 0.0 };
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        let v = lattice.velocity(i);
        let mut cb = 0.0;
        let mut xq = 0.0;
        for a in 0..dim {
            cb += v[a] * b[a];
            for g in 0..dim {
                let q = v[a] * v[g] - if a == g { cs2 } else { 0.0 };
                xq += x[a][g] * q;
            }
        }
        *o = lattice.weights()[i] * (phi + cb / cs2 + xq / (2.0 * cs2 * cs2));
    }
}

/// Second-order Navier-Stokes equilibrium.
pub fn nse_equilibrium(lattice: &Lattice, rho: f64, u: Vec2, out: &mut [f64]) {
    let cs2 = lattice.cs2();
    let uu = u[0] * u[0] + u[1] * u[1];
    for (i, o) in out.iter_mut().enumerate() {
        let v = lattice.velocity(i);
        let cu = v[0] * u[0] + v[1] * u[1];
        *o = lattice.weights()[i] * rho * (1.0 + cu / cs2 + (cu * cu - cs2 * uu) / (2.0 * cs2 * cs2));
    }
}

/// Forcing distribution for an acceleration `force`.
pub fn nse_force(lattice: &Lattice, rho: f64, u: Vec2, force: Vec2, out: &mut [f64]) {
    let cs2 = lattice.cs2();
    let fu = force[0] * u[0] + force[1] * u[1];
    for (i, o) in out.iter_mut().enumerate() {
        let v = lattice.velocity(i);
        let cf = v[0] * force[0] + v[1] * force[1];
        let cu = v[0] * u[0] + v[1] * u[1];
        // (F u + u F):(c c - cs2 I) = 2 (c.F)(c.u) - 2 cs2 F.u
        *o = lattice.weights()[i] * rho * (cf / cs2 + (cf * cu - cs2 * fu) / (cs2 * cs2));
    }
}

#[derive(Clone)]
pub enum NacdeTerms {
    /// B = phi u, D = phi I, C = vartheta phi u u.
    Advection { u: Vec2, vartheta: f64 },
    Custom {
        flux: Arc<dyn Fn(f64) -> Vec2 + Send + Sync>,
        diffusion: Arc<dyn Fn(f64) -> Mat2 + Send + Sync>,
        aux: Arc<dyn Fn(f64) -> Mat2 + Send + Sync>,
    },
}

impl fmt::Debug for NacdeTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NacdeTerms::Advection { u, vartheta } => write!(f, "Advection {{ u: {u:?}, vartheta: {vartheta:?} }}"),
            NacdeTerms::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl NacdeTerms {
    fn eval(&self, phi: f64) -> (Vec2, Mat2, Mat2) {
        match self {
            NacdeTerms::Advection { u, vartheta } => (
                [phi * u[0], phi * u[1]],
                [[phi, 0.0], [0.0, phi]],
                [
                    [vartheta * phi * u[0] * u[0], vartheta * phi * u[0] * u[1]],
                    [vartheta * phi * u[1] * u[0], vartheta * phi * u[1] * u[1]],
                ],
            ),
            NacdeTerms::Custom { flux, diffusion, aux } => (flux(phi), diffusion(phi), aux(phi)),
        }
    }
}

/// Nonlinear anisotropic convection-diffusion closure (single conserved moment phi).
#[derive(Debug, Clone)]
pub struct NacdeModel {
    pub terms: NacdeTerms,
    pub chi: f64,
    /// Constant source R.
    pub source: f64,
    /// Include the auxiliary source G that removes the deviation terms.
    pub auxiliary: bool,
}

impl NacdeModel {
    /// Linear advection-diffusion with C = phi u u and the auxiliary source switched on.
    pub fn advection_diffusion(u: Vec2, chi: f64) -> Self {
        NacdeModel { terms: NacdeTerms::Advection { u, vartheta: 1.0 }, chi, source: 0.0, auxiliary: true }
    }

    /// The one-dimensional equilibrium `w_i phi [1 + c_i u/cs2 + vartheta u^2 (c_i^2 - cs2)/(2 cs2^2)]`.
    pub fn cde_1d(u: f64, vartheta: f64) -> Self {
        NacdeModel { terms: NacdeTerms::Advection { u: [u, 0.0], vartheta }, chi: 1.0, source: 0.0, auxiliary: false }
    }

    /// Rates of the first-order moments (rows 1..=d of S).
    fn rate_block(ctx: &ClosureContext) -> Mat2 {
        let d = ctx.lattice.dim();
        let mut s = [[0.0; 2]; 2];
        for a in 0..d {
            for g in 0..d {
                s[a][g] = ctx.relaxation[(1 + a, 1 + g)];
            }
        }
        s
    }

    /// Coefficient matrices (I - Sr/2) and (I - b Sr / (2 a^2)) of the auxiliary moment.
    fn g_coefficients(ctx: &ClosureContext) -> (Mat2, Mat2) {
        let s = Self::rate_block(ctx);
        let a2 = ctx.lattice.a() * ctx.lattice.a();
        let r = ctx.b / (2.0 * a2);
        let mut kt = [[0.0; 2]; 2];
        let mut kc = [[0.0; 2]; 2];
        for a in 0..2 {
            for g in 0..2 {
                let id = if a == g { 1.0 } else { 0.0 };
                kt[a][g] = id - 0.5 * s[a][g];
                kc[a][g] = id - r * s[a][g];
            }
        }
        (kt, kc)
    }
}

impl NacdeModel {
    /// Constant-velocity terms: equilibrium and source are linear in phi, its backward
    /// difference and u.grad(phi).
    #[allow(clippy::too_many_arguments)]
    fn evaluate_advection(
        &self,
        ctx: &ClosureContext,
        u: Vec2,
        vartheta: f64,
        phi: &[f64],
        previous: Option<&[f64]>,
        eq: &mut [f64],
        src: &mut [f64],
    ) {
        let lat = ctx.lattice;
        let n = ctx.grid.len();
        let q = lat.q();
        let dim = lat.dim();
        let cs2 = lat.cs2();
        let w = lat.weights();
        let uu = [[vartheta * u[0] * u[0], vartheta * u[0] * u[1]], [vartheta * u[1] * u[0], vartheta * u[1] * u[1]]];
        let mut unit = vec![0.0; q];
        nacde_equilibrium(lat, 1.0, u, [[1.0, 0.0], [0.0, 1.0]], uu, self.chi, &mut unit);
        for i in 0..q {
            for (e, p) in eq[i * n..(i + 1) * n].iter_mut().zip(phi) {
                *e = unit[i] * p;
            }
        }
        if !self.auxiliary {
            for i in 0..q {
                src[i * n..(i + 1) * n].fill(w[i] * self.source);
            }
            return;
        }
        // M1G = kt u dphi/dt + kc vartheta u (u.grad phi)
        let (kt, kc) = Self::g_coefficients(ctx);
        let mut ct = vec![0.0; q];
        let mut cc = vec![0.0; q];
        for i in 0..q {
            let v = lat.velocity(i);
            for a in 0..dim {
                for g in 0..dim {
                    ct[i] += v[a] * kt[a][g] * u[g];
                    cc[i] += v[a] * kc[a][g] * vartheta * u[g];
                }
            }
            ct[i] *= w[i] / (cs2 * ctx.dt);
            cc[i] *= w[i] / cs2;
        }
        let mut grad = vec![[0.0; 2]; n];
        gradient(ctx.grid, phi, dim, &mut grad);
        let ug: Vec<f64> = grad.iter().map(|g| u[0] * g[0] + u[1] * g[1]).collect();
        for i in 0..q {
            let out = &mut src[i * n..(i + 1) * n];
            let r = w[i] * self.source;
            match previous {
                Some(pp) => {
                    for s in 0..n {
                        out[s] = ct[i] * (phi[s] - pp[s]) + cc[i] * ug[s] + r;
                    }
                }
                None => {
                    for s in 0..n {
                        out[s] = cc[i] * ug[s] + r;
                    }
                }
            }
        }
    }
}

impl Closure for NacdeModel {
    fn n_conserved(&self) -> usize {
        1
    }

    fn check_transform(&self, lattice: &Lattice, transform: &TransformMatrix) -> Result<()> {
        let m = transform.matrix();
        if (0..lattice.q()).any(|i| m[(0, i)] != 1.0) {
            return Err(Error::Structure("first transform row must be all ones for the scalar model".into()));
        }
        Ok(())
    }

    fn evaluate(
        &self,
        ctx: &ClosureContext,
        current: &[Vec<f64>],
        previous: Option<&[Vec<f64>]>,
        eq: &mut [f64],
        src: &mut [f64],
    ) {
        let lat = ctx.lattice;
        let grid = ctx.grid;
        let n = grid.len();
        let q = lat.q();
        let dim = lat.dim();
        let cs2 = lat.cs2();
        let phi = &current[0];
        if let NacdeTerms::Advection { u, vartheta } = self.terms {
            self.evaluate_advection(ctx, u, vartheta, phi, previous.map(|p| &p[0][..]), eq, src);
            return;
        }
        let mut feq = vec![0.0; q];
        let mut bflux = vec![[0.0; 2]; n];
        let mut cten = vec![[[0.0; 2]; 2]; n];
        for s in 0..n {
            let (b, d, c) = self.terms.eval(phi[s]);
            nacde_equilibrium(lat, phi[s], b, d, c, self.chi, &mut feq);
            for i in 0..q {
                eq[i * n + s] = feq[i];
            }
            bflux[s] = b;
            cten[s] = c;
        }
        let w = lat.weights();
        if !self.auxiliary {
            for i in 0..q {
                src[i * n..(i + 1) * n].fill(w[i] * self.source);
            }
            return;
        }
        // M1G = (I - Sr/2) dB/dt + (I - b Sr/(2a^2)) div C
        let (kt, kc) = Self::g_coefficients(ctx);
        let mut divc = vec![[0.0; 2]; n];
        let mut grad = vec![[0.0; 2]; n];
        let mut comp = vec![0.0; n];
        for a in 0..dim {
            for g in 0..dim {
                for s in 0..n {
                    comp[s] = cten[s][g][a];
                }
                gradient(grid, &comp, dim, &mut grad);
                for s in 0..n {
                    divc[s][a] += grad[s][g];
                }
            }
        }
        let mut vel = vec![[0.0; 2]; q];
        for (i, v) in vel.iter_mut().enumerate() {
            *v = lat.velocity(i);
        }
        for s in 0..n {
            let mut dbdt = [0.0; 2];
            if let Some(prev) = previous {
                let (bp, _, _) = self.terms.eval(prev[0][s]);
                for a in 0..dim {
                    dbdt[a] = (bflux[s][a] - bp[a]) / ctx.dt;
                }
            }
            let mut m1g = [0.0; 2];
            for a in 0..dim {
                for g in 0..dim {
                    m1g[a] += kt[a][g] * dbdt[g] + kc[a][g] * divc[s][g];
                }
            }
            for i in 0..q {
                let cg = vel[i][0] * m1g[0] + vel[i][1] * m1g[1];
                src[i * n + s] = w[i] * (cg / cs2 + self.source);
            }
        }
    }

    fn linear_form(&self, ctx: &ClosureContext) -> Option<LinearClosure> {
        let NacdeTerms::Advection { u, vartheta } = self.terms else {
            return None;
        };
        if self.source != 0.0 {
            return None;
        }
        let lat = ctx.lattice;
        let dim = lat.dim();
        let q = lat.q();
        let mut feq = vec![0.0; q];
        let uu = [[vartheta * u[0] * u[0], vartheta * u[0] * u[1]], [vartheta * u[1] * u[0], vartheta * u[1] * u[1]]];
        nacde_equilibrium(lat, 1.0, u, [[1.0, 0.0], [0.0, 1.0]], uu, self.chi, &mut feq);
        let eq0: Vec<Stencil> = feq.iter().map(|&e| Stencil::scalar(dim, e)).collect();
        if !self.auxiliary {
            return Some(LinearClosure { eq: vec![eq0], src: vec![vec![Stencil::zero(dim); q]] });
        }
        let (kt, kc) = Self::g_coefficients(ctx);
        let h = ctx.grid.dx;
        // div(phi vartheta u u)_a = vartheta u_a sum_g u_g d_g phi, central differences
        let mut ugrad = Stencil::zero(dim);
        for g in 0..dim {
            let mut e = [0; 2];
            e[g] = 1;
            let d = Stencil::from_taps(dim, [(e, 1.0 / (2.0 * h)), ([-e[0], -e[1]], -1.0 / (2.0 * h))]);
            ugrad = ugrad.add_pruned(&d.scale(u[g]), 0.0);
        }
        let cs2 = lat.cs2();
        let mut src0 = Vec::with_capacity(q);
        let mut src1 = Vec::with_capacity(q);
        for i in 0..q {
            let v = lat.velocity(i);
            let wi = lat.weights()[i];
            // c_i . kt u / dt  and  c_i . kc (vartheta u)
            let mut ckt = 0.0;
            let mut ckc = 0.0;
            for a in 0..dim {
                for g in 0..dim {
                    ckt += v[a] * kt[a][g] * u[g];
                    ckc += v[a] * kc[a][g] * vartheta * u[g];
                }
            }
            let s0 = Stencil::scalar(dim, wi * ckt / (ctx.dt * cs2)).add_pruned(&ugrad.scale(wi * ckc / cs2), 0.0);
            src0.push(s0);
            src1.push(Stencil::scalar(dim, -wi * ckt / (ctx.dt * cs2)));
        }
        Some(LinearClosure { eq: vec![eq0, vec![Stencil::zero(dim); q]], src: vec![src0, src1] })
    }
}

/// Weakly compressible Navier-Stokes closure with a constant body acceleration.
///
/// The evolved momentum moments are shifted by half a step of forcing, so the conserved moments
/// are `(rho, rho u - dt/2 rho F)`.
#[derive(Debug, Clone)]
pub struct NseModel {
    pub force: Vec2,
}

impl NseModel {
    pub fn new(force: Vec2) -> Self {
        NseModel { force }
    }

    /// Conserved moments corresponding to physical density and velocity.
    pub fn conserved_from_physical(&self, rho: f64, u: Vec2, dt: f64) -> [f64; 3] {
        [rho, rho * (u[0] - 0.5 * dt * self.force[0]), rho * (u[1] - 0.5 * dt * self.force[1])]
    }

    /// Physical density and velocity from conserved moments.
    pub fn physical(&self, m: [f64; 3], dt: f64) -> (f64, Vec2) {
        let rho = m[0];
        (rho, [m[1] / rho + 0.5 * dt * self.force[0], m[2] / rho + 0.5 * dt * self.force[1]])
    }
}

impl Closure for NseModel {
    fn n_conserved(&self) -> usize {
        3
    }

    fn check_transform(&self, lattice: &Lattice, transform: &TransformMatrix) -> Result<()> {
        if lattice.dim() != 2 {
            return Err(Error::Parameter("the flow model is two-dimensional".into()));
        }
        let m = transform.matrix();
        for i in 0..lattice.q() {
            let v = lattice.velocity(i);
            let ok = m[(0, i)] == 1.0 && (m[(1, i)] - v[0]).abs() < 1e-12 && (m[(2, i)] - v[1]).abs() < 1e-12;
            if !ok {
                return Err(Error::Structure(
                    "transform rows 0..3 must be density and the two momentum components".into(),
                ));
            }
        }
        Ok(())
    }

    fn evaluate(
        &self,
        ctx: &ClosureContext,
        current: &[Vec<f64>],
        _previous: Option<&[Vec<f64>]>,
        eq: &mut [f64],
        src: &mut [f64],
    ) {
        let lat = ctx.lattice;
        let n = ctx.grid.len();
        let q = lat.q();
        let mut fe = vec![0.0; q];
        let mut ff = vec![0.0; q];
        for s in 0..n {
            let (rho, u) = self.physical([current[0][s], current[1][s], current[2][s]], ctx.dt);
            nse_equilibrium(lat, rho, u, &mut fe);
            nse_force(lat, rho, u, self.force, &mut ff);
            for i in 0..q {
                eq[i * n + s] = fe[i] - 0.5 * ctx.dt * ff[i];
                src[i * n + s] = ff[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    Acoustic,
    Diffusive,
}

/// Relaxation-time block S1 realising a diffusion tensor:
/// `kappa = chi cs2 dt [S1 + (b/(2a^2) - 1) I]`.
pub fn set_kappa(kappa: &DMatrix<f64>, chi: f64, cs2: f64, dt: f64, a: f64, b: f64) -> Result<DMatrix<f64>> {
    let d = kappa.nrows();
    if !kappa.is_square() || d == 0 || d > 2 {
        return Err(Error::Dimension("diffusion tensor must be 1x1 or 2x2".into()));
    }
    if (kappa - kappa.transpose()).amax() > 1e-14 * kappa.amax().max(1e-300) {
        return Err(Error::Parameter("diffusion tensor must be symmetric".into()));
    }
    let scale = chi * cs2 * dt;
    if !(scale > 0.0) {
        return Err(Error::Parameter("chi * cs2 * dt must be positive".into()));
    }
    let shift = b / (2.0 * a * a) - 1.0;
    let s1 = kappa / scale - DMatrix::identity(d, d) * shift;
    // the rates (S1)^{-1} must have eigenvalues in (0, 2), i.e. S1 eigenvalues above 1/2
    for ev in s1.clone().symmetric_eigenvalues().iter() {
        if !(*ev > 0.5) {
            return Err(Error::Stability(format!(
                "relaxation time eigenvalue {ev} <= 1/2: the tensor is not attainable for (a, b) = ({a}, {b})"
            )));
        }
    }
    Ok(s1)
}

/// Diffusion tensor produced by a relaxation-time block S1.
pub fn kappa_from_s1(s1: &DMatrix<f64>, chi: f64, cs2: f64, dt: f64, a: f64, b: f64) -> DMatrix<f64> {
    let d = s1.nrows();
    (s1 + DMatrix::identity(d, d) * (b / (2.0 * a * a) - 1.0)) * (chi * cs2 * dt)
}

/// Shear and bulk rates (s_shear, s_bulk) for kinematic viscosity `nu` and optional bulk `nu_b`.
/// Without `nu_b` the bulk rate equals the shear rate.
pub fn set_viscosity(
    nu: f64,
    nu_b: Option<f64>,
    cs2: f64,
    dt: f64,
    a: f64,
    b: f64,
    d: usize,
    scaling: Scaling,
) -> Result<(f64, f64)> {
    if !(nu > 0.0) {
        return Err(Error::Parameter(format!("viscosity must be positive, got {nu}")));
    }
    let r = b / (2.0 * a * a);
    let unit = cs2 * dt;
    let tau_s = nu / unit - (r - 1.0);
    if !(tau_s > 0.5) {
        return Err(Error::Stability(format!("shear relaxation time {tau_s} <= 1/2")));
    }
    let s2s = 1.0 / tau_s;
    let s2b = match nu_b {
        None => s2s,
        Some(nb) => {
            let extra = match scaling {
                Scaling::Diffusive => r - 1.0,
                Scaling::Acoustic => r - 0.5,
            };
            let tau_b = 0.5 * d as f64 * (nb / unit - extra) - (r - 1.0);
            if !(tau_b > 0.5) {
                return Err(Error::Stability(format!("bulk relaxation time {tau_b} <= 1/2")));
            }
            1.0 / tau_b
        }
    };
    Ok((s2s, s2b))
}

/// Viscosities (nu, nu_b) produced by rates (s_shear, s_bulk).
pub fn viscosity_from_rates(s2s: f64, s2b: f64, cs2: f64, dt: f64, a: f64, b: f64, d: usize, scaling: Scaling) -> (f64, f64) {
    let r = b / (2.0 * a * a);
    let unit = cs2 * dt;
    let extra = match scaling {
        Scaling::Diffusive => r - 1.0,
        Scaling::Acoustic => r - 0.5,
    };
    let nu = (1.0 / s2s + r - 1.0) * unit;
    let nub = (2.0 / d as f64 * (1.0 / s2b + r - 1.0) + extra) * unit;
    (nu, nub)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nacde_equilibrium_moments() {
        let lat = Lattice::d2q9(2.0, 0.7).unwrap();
        let (phi, u) = (1.3, [0.05, -0.02]);
        let c = [[phi * u[0] * u[0], phi * u[0] * u[1]], [phi * u[1] * u[0], phi * u[1] * u[1]]];
        let mut f = vec![0.0; 9];
        nacde_equilibrium(&lat, phi, [phi * u[0], phi * u[1]], [[phi, 0.0], [0.0, phi]], c, 1.0, &mut f);
        let mut m0 = 0.0;
        let mut m1 = [0.0; 2];
        let mut m2 = [[0.0; 2]; 2];
        for i in 0..9 {
            let v = lat.velocity(i);
            m0 += f[i];
            for a in 0..2 {
                m1[a] += v[a] * f[i];
                for g in 0..2 {
                    m2[a][g] += v[a] * v[g] * f[i];
                }
            }
        }
        assert!((m0 - phi).abs() < 1e-14);
        assert!((m1[0] - phi * u[0]).abs() < 1e-14 && (m1[1] - phi * u[1]).abs() < 1e-14);
        for a in 0..2 {
            for g in 0..2 {
                let want = lat.cs2() * phi * if a == g { 1.0 } else { 0.0 } + c[a][g];
                assert!((m2[a][g] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn force_moments() {
        let lat = Lattice::d2q9(1.5, 1.0).unwrap();
        let mut f = vec![0.0; 9];
        nse_force(&lat, 1.1, [0.01, 0.02], [0.3, -0.1], &mut f);
        let s: f64 = f.iter().sum();
        let mx: f64 = (0..9).map(|i| lat.velocity(i)[0] * f[i]).sum();
        let mxy: f64 = (0..9).map(|i| lat.velocity(i)[0] * lat.velocity(i)[1] * f[i]).sum();
        assert!(s.abs() < 1e-14);
        assert!((mx - 1.1 * 0.3).abs() < 1e-14);
        assert!((mxy - 1.1 * (0.3 * 0.02 + (-0.1) * 0.01)).abs() < 1e-14);
    }

    #[test]
    fn viscosity_matches_reference_value() {
        let lat = Lattice::d2q9(1.0 / 16.0 / 0.02, 1.0).unwrap();
        let (s, sb) = set_viscosity(0.06, None, lat.cs2(), 0.02, 1.0, 1.0, 2, Scaling::Diffusive).unwrap();
        let oracle = 1.0 / (0.06 / (3.125f64.powi(2) / 3.0 * 0.02) + 0.5);
        assert!((s - oracle).abs() < 1e-15 && (s - 0.70344).abs() < 2e-5, "{s}");
        assert_eq!(s, sb);
        let (s, sb) = set_viscosity(0.06, Some(0.1), lat.cs2(), 0.02, 0.5, 0.4, 2, Scaling::Acoustic).unwrap();
        let (nu, nub) = viscosity_from_rates(s, sb, lat.cs2(), 0.02, 0.5, 0.4, 2, Scaling::Acoustic);
        assert!((nu - 0.06).abs() < 1e-15 && (nub - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kappa_round_trip_and_rejection() {
        let k = DMatrix::from_row_slice(2, 2, &[2e-3, 1e-3, 1e-3, 3e-3]);
        let s1 = set_kappa(&k, 1.0, 0.1, 0.02, 0.5, 0.5).unwrap();
        let back = kappa_from_s1(&s1, 1.0, 0.1, 0.02, 0.5, 0.5);
        assert!((back - &k).amax() < 1e-18);
        let tiny = DMatrix::from_row_slice(1, 1, &[1e-9]);
        assert!(matches!(set_kappa(&tiny, 1.0, 0.1, 0.02, 0.5, 0.5), Err(Error::Stability(_))));
    }
}
