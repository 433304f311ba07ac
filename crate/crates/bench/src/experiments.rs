//! Resolution sweeps for the three benchmark problems.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use gpmrt_core::fourth_order::{all_roots, cde_model, consistent_populations, solve_fourth_order, FourthOrderParams};
use gpmrt_core::grid::Walls;
use gpmrt_core::model::{Closure, ClosureContext};
use gpmrt_core::models::{nse_equilibrium, nse_force, set_kappa, set_viscosity, NacdeModel, NacdeTerms, NseModel};
use gpmrt_core::scheme::{bootstrap_folded_from_lb, bootstrap_from_lb};
use gpmrt_core::{
    derive_scheme, DeriveOptions, GpmfdSystem, Grid, Lattice, LbSolver, ModelSpec, RelaxationMatrix, TransformMatrix,
};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{Problem, Resolution, RunConfig};
use crate::exact::{cde1d_exact, gauss_hill_field, poiseuille_centre_velocity, poiseuille_exact};
use crate::metrics::{least_squares_rate, pairwise_rates, rmse, rmse_components, sci4};

/// Outcome at one resolution.
#[derive(Debug, Clone)]
pub struct ResolutionResult {
    pub res: Resolution,
    pub steps: usize,
    pub rmse_lb: Option<f64>,
    pub rmse_fd: Option<f64>,
    /// Max deviation between the LB and FD fields relative to the field's max norm.
    pub lb_fd_dev: Option<f64>,
    /// Relative change over the last 100 steps when the run stops at a steady state.
    pub steady_change: Option<f64>,
    pub wall_seconds: f64,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub name: String,
    pub grid: Grid,
    pub field: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub config: RunConfig,
    pub rows: Vec<ResolutionResult>,
}

fn errors(rows: &[ResolutionResult], pick: impl Fn(&ResolutionResult) -> Option<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let e: Option<Vec<f64>> = rows.iter().map(&pick).collect();
    e.map(|e| (e, rows.iter().map(|r| r.res.dx).collect()))
}

impl ErrorReport {
    pub fn lb_errors(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.rmse_lb).collect()
    }

    pub fn fd_errors(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.rmse_fd).collect()
    }

    pub fn pairwise_lb(&self) -> Option<Vec<f64>> {
        errors(&self.rows, |r| r.rmse_lb).and_then(|(e, h)| pairwise_rates(&e, &h).ok())
    }

    pub fn pairwise_fd(&self) -> Option<Vec<f64>> {
        errors(&self.rows, |r| r.rmse_fd).and_then(|(e, h)| pairwise_rates(&e, &h).ok())
    }

    pub fn fit_lb(&self) -> Option<f64> {
        errors(&self.rows, |r| r.rmse_lb).and_then(|(e, h)| least_squares_rate(&e, &h).ok())
    }

    pub fn fit_fd(&self) -> Option<f64> {
        errors(&self.rows, |r| r.rmse_fd).and_then(|(e, h)| least_squares_rate(&e, &h).ok())
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.wall_seconds).sum()
    }

    /// One row per resolution. Only the last column depends on the clock.
    pub fn results_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let sci = |v: Option<f64>| v.map(sci4).unwrap_or_default();
        let (plb, pfd) = (self.pairwise_lb(), self.pairwise_fd());
        let cr = |p: &Option<Vec<f64>>, i: usize| if i == 0 { None } else { p.as_ref().map(|p| p[i - 1]) };
        let mut s = String::from("dx,dt,a,b,steps,rmse_lb,rmse_fd,cr_lb,cr_fd,rmse_lb_sci,rmse_fd_sci,lb_fd_dev,wall_s\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
                r.res.dx,
                r.res.dt,
                r.res.a,
                r.res.b,
                r.steps,
                opt(r.rmse_lb),
                opt(r.rmse_fd),
                opt(cr(&plb, i)),
                opt(cr(&pfd, i)),
                sci(r.rmse_lb),
                sci(r.rmse_fd),
                opt(r.lb_fd_dev),
                r.wall_seconds
            );
        }
        s
    }

    /// Least-squares rates.
    pub fn fit_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("solver,ls_cr\nlb,{}\nfd,{}\n", opt(self.fit_lb()), opt(self.fit_fd()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("results.csv"), self.results_csv())?;
        std::fs::write(dir.join("fit.csv"), self.fit_csv())?;
        for r in &self.rows {
            for snap in &r.snapshots {
                let name = format!("{}_dx{}.csv", snap.name, (1.0 / r.res.dx).round());
                gpmrt_core::io::write_snapshot_csv(&dir.join(name), &snap.grid, &snap.field)?;
            }
        }
        Ok(())
    }
}

/// Thread pool sized by `GPMRT_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GPMRT_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GPMRT_THREADS = '{v}' is not a count"))?;
        ensure!(n > 0, "GPMRT_THREADS must be at least 1");
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Runs every resolution of `cfg` (in parallel) and collects the errors.
pub fn run_experiment(cfg: &RunConfig) -> Result<ErrorReport> {
    let res = cfg.resolutions()?;
    let pool = thread_pool()?;
    let rows: Result<Vec<ResolutionResult>> = pool.install(|| res.par_iter().map(|r| run_resolution(cfg, r)).collect());
    let rows = rows.with_context(|| format!("{} run failed; config: {cfg:?}", cfg.problem))?;
    let report = ErrorReport { config: cfg.clone(), rows };
    if let Some(dir) = &cfg.output {
        report.write(dir)?;
    }
    Ok(report)
}

pub fn run_resolution(cfg: &RunConfig, r: &Resolution) -> Result<ResolutionResult> {
    let t0 = Instant::now();
    let mut out = match cfg.problem {
        Problem::GaussHill => gauss_hill(cfg, r),
        Problem::Poiseuille => poiseuille(cfg, r),
        Problem::Cde1d => cde1d(cfg, r),
    }
    .with_context(|| format!("at dx = {}, dt = {}, (a, b) = ({}, {})", r.dx, r.dt, r.a, r.b))?;
    out.wall_seconds = t0.elapsed().as_secs_f64();
    if !cfg.snapshots {
        out.snapshots.clear();
    }
    Ok(out)
}

fn steps_for(t_end: f64, dt: f64) -> Result<usize> {
    let n = t_end / dt;
    ensure!((n - n.round()).abs() < 1e-6 * n.max(1.0), "t_end = {t_end} is not a multiple of dt = {dt}");
    Ok(n.round() as usize)
}

fn nodes_for(length: f64, dx: f64) -> Result<usize> {
    let n = length / dx;
    ensure!((n - n.round()).abs() < 1e-6, "domain length {length} is not a multiple of dx = {dx}");
    Ok(n.round() as usize)
}

fn max_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    d / max_abs(a).max(1e-300)
}

/// Non-finite values or growth far beyond the initial amplitude.
fn check_bounded(field: &[f64], bound: f64, what: &str) -> Result<()> {
    if field.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        bail!("{what} diverged (values beyond {bound:e})");
    }
    Ok(())
}

fn to_mat(t: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[t[0][0], t[0][1], t[1][0], t[1][1]])
}

/// D2Q9 advection-diffusion model on the orthogonal basis, rates `(S1)^{-1}` on the flux rows.
pub fn gauss_hill_model(cfg: &RunConfig, r: &Resolution) -> Result<ModelSpec> {
    let kappa = to_mat(cfg.kappa.ok_or_else(|| anyhow!("kappa missing"))?);
    let lat = Lattice::d2q9(r.dx / r.dt, r.a)?;
    let t = TransformMatrix::orthogonal_d2q9(lat.c(), 1)?;
    let s1 = match cfg.s1 {
        Some(s1) => to_mat(s1),
        None => set_kappa(&kappa, 1.0, lat.cs2(), r.dt, r.a, r.b)?,
    };
    let rates = s1.try_inverse().ok_or_else(|| anyhow!("S1 is singular"))?;
    let mut s = DMatrix::identity(9, 9);
    s.view_mut((1, 1), (2, 2)).copy_from(&rates);
    let rel = RelaxationMatrix::new(s, &t)?;
    let mut cl = NacdeModel::advection_diffusion(cfg.u, 1.0);
    cl.auxiliary = cfg.source_term;
    if let Some(vt) = cfg.vartheta {
        cl.terms = NacdeTerms::Advection { u: cfg.u, vartheta: vt };
    }
    Ok(ModelSpec::new(lat, t, rel, r.b, r.dt, Arc::new(cl))?)
}

fn gauss_hill(cfg: &RunConfig, r: &Resolution) -> Result<ResolutionResult> {
    let m = gauss_hill_model(cfg, r)?;
    let kappa = cfg.kappa.expect("validated");
    let t_end = cfg.t_end.expect("validated");
    let n = nodes_for(2.0, r.dx)?;
    let g = Grid::periodic_2d(n, n, r.dx, [-1.0, -1.0])?;
    let phi0 = 2.0 * PI * cfg.y0 * cfg.y0;
    let init = gauss_hill_field(&g, 0.0, cfg.u, kappa, cfg.y0, phi0)?;
    let exact = gauss_hill_field(&g, t_end, cfg.u, kappa, cfg.y0, phi0)?;
    let steps = steps_for(t_end, r.dt)?;
    let bound = 1e3 * max_abs(&init);
    let mut out = ResolutionResult {
        res: *r,
        steps,
        rmse_lb: None,
        rmse_fd: None,
        lb_fd_dev: None,
        steady_change: None,
        wall_seconds: 0.0,
        snapshots: vec![Snapshot { name: "exact".into(), grid: g.clone(), field: exact.clone() }],
    };
    let mut lb_field = None;
    if cfg.solver.lb() {
        let mut lb = LbSolver::from_conserved(m.clone(), g.clone(), vec![init.clone()])?;
        lb.run(steps)?;
        let f = lb.conserved().swap_remove(0);
        check_bounded(&f, bound, "lattice Boltzmann run")?;
        out.rmse_lb = Some(rmse(&f, &exact)?);
        lb_field = Some(f);
    }
    if cfg.solver.fd() {
        let sch = derive_scheme(&m, 0, DeriveOptions::default())?;
        let lin = m.closure.linear_form(&m.context(&g)).ok_or_else(|| anyhow!("closure has no linear form"))?;
        let folded = sch.fold_linear(&lin);
        let mut lb = LbSolver::from_conserved(m, g.clone(), vec![init])?;
        let mut h = bootstrap_folded_from_lb(&folded, &mut lb)?;
        ensure!(lb.step_count() <= steps, "run shorter than the start-up");
        for _ in lb.step_count()..steps {
            folded.step(&g, &mut h)?;
        }
        let f = h.swap_remove_front(0).expect("history");
        check_bounded(&f, bound, "finite-difference run")?;
        out.rmse_fd = Some(rmse(&f, &exact)?);
        if let Some(l) = &lb_field {
            out.lb_fd_dev = Some(relative_deviation(l, &f));
        }
        out.snapshots.push(Snapshot { name: "fd".into(), grid: g.clone(), field: f });
    }
    if let Some(f) = lb_field {
        out.snapshots.push(Snapshot { name: "lb".into(), grid: g, field: f });
    }
    Ok(out)
}

/// Flow closure on the doubled channel `[0, 2H)`: the upper half is the mirror image of the
/// channel, so the body force changes sign there. Odd reflection about both walls makes the
/// periodic problem reproduce the walled one.
#[derive(Debug, Clone)]
pub struct MirroredChannel {
    pub force: f64,
    /// Rows of the physical half.
    pub ny: usize,
}

impl MirroredChannel {
    pub fn force_at(&self, site: usize, nx: usize) -> f64 {
        if site / nx < self.ny {
            self.force
        } else {
            -self.force
        }
    }
}

impl Closure for MirroredChannel {
    fn n_conserved(&self) -> usize {
        3
    }

    fn check_transform(&self, lattice: &Lattice, transform: &TransformMatrix) -> gpmrt_core::Result<()> {
        NseModel::new([self.force, 0.0]).check_transform(lattice, transform)
    }

    fn evaluate(&self, ctx: &ClosureContext, cur: &[Vec<f64>], _prev: Option<&[Vec<f64>]>, eq: &mut [f64], src: &mut [f64]) {
        let n = ctx.grid.len();
        let q = ctx.lattice.q();
        let mut fe = vec![0.0; q];
        let mut ff = vec![0.0; q];
        for s in 0..n {
            let gx = self.force_at(s, ctx.grid.nx);
            let rho = cur[0][s];
            let u = [cur[1][s] / rho + 0.5 * ctx.dt * gx, cur[2][s] / rho];
            nse_equilibrium(ctx.lattice, rho, u, &mut fe);
            nse_force(ctx.lattice, rho, u, [gx, 0.0], &mut ff);
            for i in 0..q {
                eq[i * n + s] = fe[i] - 0.5 * ctx.dt * ff[i];
                src[i * n + s] = ff[i];
            }
        }
    }
}

fn flow_model(r: &Resolution, nu: f64, closure: Arc<dyn Closure>) -> Result<ModelSpec> {
    let lat = Lattice::d2q9(r.dx / r.dt, r.a)?;
    let t = TransformMatrix::orthogonal_d2q9(lat.c(), 3)?;
    let scaling = gpmrt_core::models::Scaling::Diffusive;
    let (s2s, _) = set_viscosity(nu, None, lat.cs2(), r.dt, r.a, r.b, 2, scaling)?;
    let mut s = DMatrix::identity(9, 9);
    for i in 3..6 {
        s[(i, i)] = s2s;
    }
    let rel = RelaxationMatrix::new(s, &t)?;
    Ok(ModelSpec::new(lat, t, rel, r.b, r.dt, closure)?)
}

/// Velocity `j / rho + dt G / 2` on the first `sites` sites.
fn velocity(cons: &[Vec<f64>], dt: f64, force: impl Fn(usize) -> f64, sites: usize) -> [Vec<f64>; 2] {
    let ux = (0..sites).map(|s| cons[1][s] / cons[0][s] + 0.5 * dt * force(s)).collect();
    let uy = (0..sites).map(|s| cons[2][s] / cons[0][s]).collect();
    [ux, uy]
}

fn relative_change(u: &[Vec<f64>; 2], old: &[Vec<f64>; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..2 {
        for (a, b) in u[c].iter().zip(&old[c]) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    (num / den.max(1e-300)).sqrt()
}

/// Runs in blocks of 100 steps until the relative velocity change over a block drops below
/// `tol`. Returns the change of the last block.
fn run_to_steady(lb: &mut LbSolver, vel: impl Fn(&LbSolver) -> [Vec<f64>; 2], tol: f64, max_steps: usize) -> Result<f64> {
    let mut old = vel(lb);
    loop {
        lb.run(100)?;
        let u = vel(lb);
        let change = relative_change(&u, &old);
        ensure!(change.is_finite(), "flow diverged at step {}", lb.step_count());
        if change < tol {
            return Ok(change);
        }
        if lb.step_count() >= max_steps {
            bail!("no steady state after {} steps (relative change {change:e})", lb.step_count());
        }
        old = u;
    }
}

fn poiseuille(cfg: &RunConfig, r: &Resolution) -> Result<ResolutionResult> {
    let nu = cfg.nu.expect("validated");
    let force = cfg.force.expect("validated");
    let h = 1.0;
    let ny = nodes_for(h, r.dx)?;
    let nx = cfg.nx;
    let u_max = poiseuille_centre_velocity(force, h, nu);
    let walled = Grid::new(nx, ny, r.dx, [0.0, 0.5 * r.dx], Walls::HalfwayY)?;
    let sites = walled.len();
    let ex: Vec<f64> = (0..sites).map(|s| poiseuille_exact(walled.position(s)[1], u_max, h)).collect();
    let zero = vec![0.0; sites];
    let mut out = ResolutionResult {
        res: *r,
        steps: 0,
        rmse_lb: None,
        rmse_fd: None,
        lb_fd_dev: None,
        steady_change: None,
        wall_seconds: 0.0,
        snapshots: vec![Snapshot { name: "exact_ux".into(), grid: walled.clone(), field: ex.clone() }],
    };
    let mut lb_ux = None;
    if cfg.solver.lb() {
        let nse = NseModel::new([force, 0.0]);
        let m = flow_model(r, nu, Arc::new(nse.clone()))?;
        let c0 = nse.conserved_from_physical(1.0, [0.0, 0.0], r.dt);
        let cons: Vec<Vec<f64>> = (0..3).map(|j| vec![c0[j]; sites]).collect();
        let mut lb = LbSolver::from_conserved(m, walled.clone(), cons)?;
        let dt = r.dt;
        let vel = |lb: &LbSolver| velocity(&lb.conserved(), dt, |_| force, sites);
        out.steady_change = Some(run_to_steady(&mut lb, vel, cfg.steady_tol, cfg.max_steps)?);
        out.steps = lb.step_count();
        let u = vel(&lb);
        out.rmse_lb = Some(rmse_components(&[&u[0], &u[1]], &[&ex, &zero])?);
        lb_ux = Some(u[0].clone());
        out.snapshots.push(Snapshot { name: "lb_ux".into(), grid: walled.clone(), field: u[0].clone() });
    }
    if cfg.solver.fd() {
        // converged LB history on the doubled channel, then the multi-level scheme alone
        let mirror = MirroredChannel { force, ny };
        let m = flow_model(r, nu, Arc::new(mirror.clone()))?;
        let g = Grid::periodic_2d(nx, 2 * ny, r.dx, [0.0, 0.5 * r.dx])?;
        let n = g.len();
        let cons = vec![vec![1.0; n], (0..n).map(|s| -0.5 * r.dt * mirror.force_at(s, nx)).collect(), vec![0.0; n]];
        let mut lb = LbSolver::from_conserved(m.clone(), g.clone(), cons)?;
        let dt = r.dt;
        let fa = |s: usize| mirror.force_at(s, nx);
        let change = run_to_steady(&mut lb, |lb| velocity(&lb.conserved(), dt, fa, n), cfg.steady_tol, cfg.max_steps)?;
        if out.steady_change.is_none() {
            out.steady_change = Some(change);
            out.steps = lb.step_count();
        }
        let sys = GpmfdSystem::derive(&m, DeriveOptions::default())?;
        let mut st = bootstrap_from_lb(&sys, &mut lb)?;
        for _ in 0..100 {
            sys.advance(&mut st, None)?;
        }
        let u = velocity(st.newest(), dt, fa, sites);
        ensure!(u[0].iter().all(|v| v.is_finite()), "finite-difference run diverged");
        out.rmse_fd = Some(rmse_components(&[&u[0], &u[1]], &[&ex, &zero])?);
        if let Some(l) = &lb_ux {
            out.lb_fd_dev = Some(relative_deviation(l, &u[0]));
        }
        out.snapshots.push(Snapshot { name: "fd_ux".into(), grid: walled.clone(), field: u[0].clone() });
    }
    Ok(out)
}

/// Fourth-order parameters at (a, b, eps); with `root_s1` the admissible root nearest that s1.
pub fn fourth_order_params(a: f64, b: f64, eps: f64, root_s1: Option<f64>) -> Result<FourthOrderParams> {
    match root_s1 {
        None => Ok(solve_fourth_order(a, b, eps, None)?.params),
        Some(s1) => all_roots(a, b, eps)
            .into_iter()
            .min_by(|x, y| (x.params.s1 - s1).abs().total_cmp(&(y.params.s1 - s1).abs()))
            .map(|r| r.params)
            .ok_or_else(|| anyhow!("no admissible fourth-order root at (a, b, eps) = ({a}, {b}, {eps})")),
    }
}

fn cde1d(cfg: &RunConfig, r: &Resolution) -> Result<ResolutionResult> {
    let eps = cfg.eps.expect("validated");
    let kappa = cfg.kappa.expect("validated")[0][0];
    let t_end = cfg.t_end.expect("validated");
    let u = cfg.u[0];
    ensure!(
        (kappa * r.dt / (r.dx * r.dx) - eps).abs() < 1e-9 * eps,
        "dt = {} does not give eps = {eps} at dx = {}",
        r.dt,
        r.dx
    );
    let p = fourth_order_params(r.a, r.b, eps, cfg.root_s1)?;
    let m = cde_model(r.a, r.b, &p, u, r.dx / r.dt, r.dt)?;
    let n = nodes_for(2.0, r.dx)?;
    let g = Grid::periodic_1d(n, r.dx, -1.0)?;
    let level = |t: f64| -> Vec<f64> { (0..n).map(|s| cde1d_exact(g.position(s)[0], t, u, kappa)).collect() };
    let steps = steps_for(t_end, r.dt)?;
    let exact = level(t_end);
    let mut out = ResolutionResult {
        res: *r,
        steps,
        rmse_lb: None,
        rmse_fd: None,
        lb_fd_dev: None,
        steady_change: None,
        wall_seconds: 0.0,
        snapshots: vec![Snapshot { name: "exact".into(), grid: g.clone(), field: exact.clone() }],
    };
    let mut lb_field = None;
    // populations whose trajectory passes through the exact first three levels (least-squares
    // per Fourier mode where one LB mode is invisible in phi)
    let levels = [level(0.0), level(r.dt), level(2.0 * r.dt)];
    let start = consistent_populations(r.a, r.b, &p, u * r.dt / (r.a * r.dx), &levels);
    if cfg.solver.lb() {
        let mut lb = LbSolver::from_populations(m.clone(), g.clone(), start.clone())?;
        lb.run(steps)?;
        let phi = lb.conserved().swap_remove(0);
        check_bounded(&phi, 1e3, "lattice Boltzmann run")?;
        out.rmse_lb = Some(rmse(&phi, &exact)?);
        lb_field = Some(phi);
    }
    if cfg.solver.fd() {
        let sch = derive_scheme(&m, 0, DeriveOptions::default())?;
        let lin = m.closure.linear_form(&m.context(&g)).ok_or_else(|| anyhow!("closure has no linear form"))?;
        let folded = sch.fold_linear(&lin);
        let mut lb = LbSolver::from_populations(m, g.clone(), start)?;
        let mut h = bootstrap_folded_from_lb(&folded, &mut lb)?;
        ensure!(lb.step_count() <= steps, "run shorter than the scheme's history");
        for _ in lb.step_count()..steps {
            folded.step(&g, &mut h)?;
        }
        let phi = h.swap_remove_front(0).expect("history");
        check_bounded(&phi, 1e3, "finite-difference run")?;
        out.rmse_fd = Some(rmse(&phi, &exact)?);
        if let Some(l) = &lb_field {
            out.lb_fd_dev = Some(relative_deviation(l, &phi));
        }
        out.snapshots.push(Snapshot { name: "fd".into(), grid: g.clone(), field: phi });
    }
    if let Some(f) = lb_field {
        out.snapshots.push(Snapshot { name: "lb".into(), grid: g, field: f });
    }
    Ok(out)
}

/// The model a configuration runs at one resolution (the walled-channel model for flows).
pub fn model_for(cfg: &RunConfig, r: &Resolution) -> Result<ModelSpec> {
    match cfg.problem {
        Problem::GaussHill => gauss_hill_model(cfg, r),
        Problem::Poiseuille => {
            let force = cfg.force.ok_or_else(|| anyhow!("force missing"))?;
            flow_model(r, cfg.nu.ok_or_else(|| anyhow!("nu missing"))?, Arc::new(NseModel::new([force, 0.0])))
        }
        Problem::Cde1d => {
            let eps = cfg.eps.ok_or_else(|| anyhow!("eps missing"))?;
            let p = fourth_order_params(r.a, r.b, eps, cfg.root_s1)?;
            Ok(cde_model(r.a, r.b, &p, cfg.u[0], r.dx / r.dt, r.dt)?)
        }
    }
}
