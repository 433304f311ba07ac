//! Reference convergence tables: run configurations, published values and tolerance checks.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Result};

use crate::config::{RunConfig, SolverPath};
use crate::experiments::{run_experiment, ErrorReport};
use crate::metrics::{rel_dev, sci4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Acoustic Gauss hill, both solvers in one table.
    Acoustic,
    /// Diffusive Gauss hill; LB and FD in separate tables.
    Diffusive,
    Poiseuille,
    FourthOrder,
}

impl Group {
    pub fn of_table(n: u8) -> Result<(Group, SolverPath)> {
        Ok(match n {
            1 => (Group::Acoustic, SolverPath::Both),
            2 => (Group::Diffusive, SolverPath::Lb),
            3 => (Group::Diffusive, SolverPath::Fd),
            4 => (Group::Poiseuille, SolverPath::Lb),
            5 => (Group::Poiseuille, SolverPath::Fd),
            6 => (Group::FourthOrder, SolverPath::Lb),
            7 => (Group::FourthOrder, SolverPath::Fd),
            _ => bail!("there are tables 1 to 7, not {n}"),
        })
    }

    /// Tolerances: RMSE relative deviation, whether only the coarsest RMSE is compared,
    /// CR absolute deviation, and the runtime budget in seconds.
    fn tolerances(self) -> (f64, bool, f64, f64) {
        match self {
            Group::Acoustic => (0.05, false, 0.05, 300.0),
            Group::Diffusive => (0.10, true, 0.1, 600.0),
            Group::Poiseuille => (f64::INFINITY, false, 0.1, 600.0),
            Group::FourthOrder => (0.05, false, 0.1, 120.0),
        }
    }

    /// Acoustic rates are pairwise; the others are least-squares fits over four resolutions.
    fn pairwise(self) -> bool {
        self == Group::Acoustic
    }
}

/// One parameter case with its published numbers.
#[derive(Debug, Clone)]
pub struct Case {
    pub label: String,
    pub config: RunConfig,
    pub lb: Vec<f64>,
    pub fd: Vec<f64>,
    /// Pairwise (three values) or fitted (one value).
    pub cr_lb: Vec<f64>,
    pub cr_fd: Vec<f64>,
}

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("built-in table configuration")
}

pub fn cases(group: Group) -> Vec<Case> {
    match group {
        Group::Acoustic => {
            let rows: [(f64, f64, [f64; 4], [f64; 3], [f64; 4], [f64; 3]); 3] = [
                (
                    0.625,
                    0.1,
                    [1.7185e-4, 1.1439e-4, 8.0130e-5, 5.8337e-5],
                    [1.8241, 1.9522, 2.0592],
                    [1.6970e-4, 1.1322e-4, 7.9437e-5, 5.7898e-5],
                    [1.8136, 1.9436, 2.0518],
                ),
                (
                    1.0,
                    0.1,
                    [1.4564e-4, 9.4597e-5, 6.4280e-5, 4.5156e-5],
                    [1.9334, 2.1192, 2.2908],
                    [1.4285e-4, 9.3633e-5, 6.3717e-5, 4.4808e-5],
                    [1.9244, 2.1112, 2.2839],
                ),
                (
                    0.625,
                    1.0,
                    [1.7213e-4, 1.1456e-4, 8.0248e-5, 5.8422e-5],
                    [1.8247, 1.9525, 2.0593],
                    [1.6998e-4, 1.1393e-4, 7.9554e-5, 5.7982e-5],
                    [1.8142, 1.9439, 2.0519],
                ),
            ];
            rows.iter()
                .map(|(alpha, u, lb, crl, fd, crf)| Case {
                    label: format!("alpha={alpha} u={u}"),
                    config: cfg(&format!(
                        "problem = gauss_hill\nscaling = acoustic\ndx = 1/200, 1/250, 1/300, 1/350\n\
                         dt = 1/200, 1/250, 1/300, 1/350\nkappa = {k}, {k}, {k}, {k2}\ns1 = 0.8, 0.4, 0.4, 1.2\n\
                         b_over_a2 = 1.2\nu = {u}, {u}\nt_end = 1\n",
                        k = alpha * 1e-4,
                        k2 = 2.0 * alpha * 1e-4
                    )),
                    lb: lb.to_vec(),
                    fd: fd.to_vec(),
                    cr_lb: crl.to_vec(),
                    cr_fd: crf.to_vec(),
                })
                .collect()
        }
        Group::Diffusive => {
            let rows: [((f64, f64), [f64; 4], f64, [f64; 4], f64); 5] = [
                ((1.0, 1.0), [9.5641e-6, 2.3468e-6, 1.0396e-6, 5.8420e-7], 2.0108, [6.1121e-6, 1.5280e-6, 6.7934e-7, 3.8222e-7], 1.9993),
                ((0.4, 0.2), [2.8713e-5, 6.7951e-6, 2.9940e-6, 1.6794e-6], 2.0368, [2.7548e-5, 6.8421e-6, 3.0392e-6, 1.7095e-6], 2.0036),
                ((0.4, 0.45), [2.5173e-5, 6.0406e-6, 2.6671e-6, 1.4971e-6], 2.0274, [1.0589e-5, 2.6788e-6, 1.1932e-6, 6.7179e-7], 1.9041),
                ((0.6, 0.36), [1.4732e-5, 3.5532e-6, 1.5702e-6, 8.8162e-7], 2.0240, [7.6951e-6, 1.9097e-6, 8.4799e-7, 4.7691e-7], 2.0045),
                ((0.5, 0.5), [1.7176e-5, 4.1824e-6, 1.8512e-6, 1.0400e-6], 2.0175, [9.2178e-6, 2.3532e-6, 1.0501e-6, 5.9156e-7], 1.9849),
            ];
            rows.iter()
                .map(|((a, b), lb, crl, fd, crf)| Case {
                    label: format!("(a,b)=({a},{b})"),
                    // refinement factors 1..4 under the diffusive rule
                    config: cfg(&format!(
                        "problem = gauss_hill\nscaling = diffusive\ndx = 1/80, 1/160, 1/240, 1/320\ndt = 1/50\n\
                         a = {a}\nb = {b}\nkappa = 1e-3, 1e-3, 1e-3, 2e-3\nu = 0.01, 0.01\nt_end = 2\n"
                    )),
                    lb: lb.to_vec(),
                    fd: fd.to_vec(),
                    cr_lb: vec![*crl],
                    cr_fd: vec![*crf],
                })
                .collect()
        }
        Group::Poiseuille => {
            // the published rows for b = a^2 and b = a appear under each other's labels
            let rows: [((f64, f64), [f64; 4], f64, [f64; 4], f64); 5] = [
                ((1.0, 1.0), [5.6927e-4, 1.4234e-4, 3.5586e-5, 8.8965e-6], 2.0000, [1.0618e-4, 2.6223e-5, 5.7352e-6, 1.4285e-6], 2.0719),
                ((0.2, 0.04), [3.8197e-3, 7.6164e-4, 1.6075e-4, 3.5918e-5], 2.2442, [1.4639e-4, 3.1882e-5, 6.8274e-6, 1.5054e-6], 2.2011),
                ((0.2, 0.2), [6.3294e-3, 1.5823e-3, 3.9559e-4, 9.8896e-5], 2.0000, [1.2866e-4, 3.1207e-5, 7.1306e-6, 1.7756e-6], 2.0823),
                ((0.2, 0.072), [3.8478e-3, 8.6419e-4, 2.0272e-4, 4.8929e-5], 2.0990, [1.8749e-4, 4.4785e-5, 1.0404e-5, 2.5998e-6], 2.1091),
                ((0.2, 0.36), [8.4321e-3, 2.1739e-3, 5.5153e-4, 1.3888e-4], 1.9747, [7.3677e-4, 1.6241e-4, 3.9908e-5, 9.8000e-6], 2.0774),
            ];
            rows.iter()
                .map(|((a, b), lb, crl, fd, crf)| Case {
                    label: format!("(a,b)=({a},{b})"),
                    config: cfg(&format!(
                        "problem = poiseuille\nscaling = diffusive\ndx = 1/16, 1/32, 1/64, 1/128\ndt = 1/50\n\
                         a = {a}\nb = {b}\nnu = 0.06\nforce = 0.048\nsteady_tol = 1e-10\n"
                    )),
                    lb: lb.to_vec(),
                    fd: fd.to_vec(),
                    cr_lb: vec![*crl],
                    cr_fd: vec![*crf],
                })
                .collect()
        }
        Group::FourthOrder => {
            let rows: [((f64, f64), Option<f64>, [f64; 4], f64, [f64; 4], f64); 4] = [
                ((1.0, 1.0), None, [6.1216e-4, 3.7760e-5, 2.3466e-6, 1.4628e-7], 4.0103, [5.2505e-4, 3.7716e-5, 2.5180e-6, 1.6268e-7], 3.8774),
                ((0.6, 0.9), Some(0.5687), [1.6485e-3, 1.0545e-4, 6.6188e-6, 4.1442e-7], 3.9859, [7.2309e-4, 5.1108e-5, 3.3636e-6, 2.1540e-7], 3.9043),
                ((0.9, 0.8), None, [5.8918e-4, 3.6349e-5, 1.1590e-6, 1.4082e-7], 4.0110, [2.0699e-4, 1.4997e-5, 1.0076e-6, 6.5284e-8], 3.8768),
                ((0.6, 0.6), None, [5.4684e-4, 3.3716e-5, 2.0952e-6, 1.3062e-7], 4.0105, [1.8924e-4, 1.3172e-5, 9.2169e-7, 5.9723e-8], 3.8766),
            ];
            rows.iter()
                .map(|((a, b), root, lb, crl, fd, crf)| {
                    let root = root.map(|s| format!("root_s1 = {s}\n")).unwrap_or_default();
                    Case {
                        label: format!("(a,b)=({a},{b})"),
                        config: cfg(&format!(
                            "problem = cde1d\ndx = 1/10, 1/20, 1/40, 1/80\na = {a}\nb = {b}\neps = 0.16\nkappa = 0.08\n\
                             u = 1\nt_end = 2\n{root}"
                        )),
                        lb: lb.to_vec(),
                        fd: fd.to_vec(),
                        cr_lb: vec![*crl],
                        cr_fd: vec![*crf],
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct GroupOutcome {
    pub group: Group,
    pub checks: Vec<Check>,
    pub reports: Vec<(Case, Result<ErrorReport>)>,
    pub seconds: f64,
    pub text: String,
}

impl GroupOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.ok)
    }
}

fn spacing_label(dx: f64) -> String {
    format!("1/{}", (1.0 / dx).round())
}

/// Runs every case of the group with the given solver columns and compares with the published values.
pub fn run_group(group: Group, solver: SolverPath) -> GroupOutcome {
    let (rmse_tol, coarsest_only, cr_tol, budget) = group.tolerances();
    let t0 = Instant::now();
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut text = String::new();
    let tag = match group {
        Group::Acoustic => "acoustic",
        Group::Diffusive => "diffusive",
        Group::Poiseuille => "poiseuille",
        Group::FourthOrder => "fourth",
    };
    for case in cases(group) {
        let mut c = case.config.clone();
        c.solver = solver;
        let rep = run_experiment(&c);
        let _ = writeln!(text, "{}", case.label);
        match &rep {
            Err(e) => {
                let _ = writeln!(text, "  failed: {e:#}");
                checks.push(Check { name: format!("{tag} {} run", case.label), ok: false, detail: format!("{e:#}") });
            }
            Ok(r) => {
                for (col, on, errs, printed, crs, printed_cr, fit) in [
                    ("lb", solver.lb(), r.lb_errors(), &case.lb, r.pairwise_lb(), &case.cr_lb, r.fit_lb()),
                    ("fd", solver.fd(), r.fd_errors(), &case.fd, r.pairwise_fd(), &case.cr_fd, r.fit_fd()),
                ] {
                    if !on {
                        continue;
                    }
                    let errs = errs.expect("column was run");
                    let _ = writeln!(
                        text,
                        "  {col:<2} {:>8} {:>12} {:>12} {:>8}",
                        "dx", "rmse", "printed", "dev"
                    );
                    for (i, (e, p)) in errs.iter().zip(printed).enumerate() {
                        let dx = r.rows[i].res.dx;
                        let _ = writeln!(text, "     {:>8} {:>12} {:>12} {:>7.1}%", spacing_label(dx), sci4(*e), sci4(*p), 100.0 * rel_dev(*e, *p));
                        if rmse_tol.is_finite() && (!coarsest_only || i == 0) {
                            checks.push(Check {
                                name: format!("{tag} {} {col} rmse dx={}", case.label, spacing_label(dx)),
                                ok: rel_dev(*e, *p) <= rmse_tol,
                                detail: format!("{} vs printed {} ({:.1}%)", sci4(*e), sci4(*p), 100.0 * rel_dev(*e, *p)),
                            });
                        }
                    }
                    if group.pairwise() {
                        let crs = crs.expect("at least two resolutions");
                        for (i, (v, p)) in crs.iter().zip(printed_cr).enumerate() {
                            let name = format!("{tag} {} {col} cr dx={}", case.label, spacing_label(r.rows[i + 1].res.dx));
                            let _ = writeln!(text, "     cr {:<8} {v:.4} printed {p:.4}", spacing_label(r.rows[i + 1].res.dx));
                            checks.push(Check { name, ok: (v - p).abs() <= cr_tol, detail: format!("{v:.4} vs printed {p:.4}") });
                        }
                    } else {
                        let v = fit.expect("at least two resolutions");
                        let p = printed_cr[0];
                        let _ = writeln!(text, "     cr (fit) {v:.4} printed {p:.4}");
                        checks.push(Check {
                            name: format!("{tag} {} {col} cr", case.label),
                            ok: (v - p).abs() <= cr_tol,
                            detail: format!("{v:.4} vs printed {p:.4}"),
                        });
                    }
                }
                if group == Group::Poiseuille {
                    let worst = r.rows.iter().filter_map(|x| x.steady_change).fold(0.0, f64::max);
                    checks.push(Check {
                        name: format!("{tag} {} steady", case.label),
                        ok: r.rows.iter().all(|x| x.steady_change.is_some_and(|c| c < 1e-10)),
                        detail: format!("largest final relative change {worst:e}"),
                    });
                }
                if let Some(dev) = r.rows.iter().filter_map(|x| x.lb_fd_dev).reduce(f64::max) {
                    let _ = writeln!(text, "  max LB/FD deviation {dev:.2e}");
                }
            }
        }
        reports.push((case, rep));
    }
    let seconds = t0.elapsed().as_secs_f64();
    checks.push(Check { name: format!("{tag} runtime"), ok: seconds <= budget, detail: format!("{seconds:.1} s (budget {budget} s)") });
    GroupOutcome { group, checks, reports, seconds, text }
}
