use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use gpmrt_core::fourth_order::{all_roots, max_amplification, stability_csv, stability_region, vartheta, STABILITY_TOL};
use gpmrt_core::{derive_scheme, DeriveOptions};
use gpmrt_bench::config::{parse_number, RunConfig};
use gpmrt_bench::experiments::{model_for, run_experiment, ErrorReport};
use gpmrt_bench::metrics::sci4;
use gpmrt_bench::tables::{run_group, Group};

#[derive(Parser)]
#[command(name = "gpmrt", version, about = "Generalized propagation MRT lattice Boltzmann and equivalent finite-difference solvers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a convergence sweep described by a config file.
    Run {
        config: PathBuf,
        /// Output directory for results.csv, fit.csv and snapshots (overrides `output`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the finite-difference scheme of a config's model.
    Derive {
        config: PathBuf,
        /// Resolution index within the sweep.
        #[arg(long, default_value_t = 0)]
        resolution: usize,
        /// Conserved moment; all when omitted.
        #[arg(long)]
        moment: Option<usize>,
    },
    /// Solve the fourth-order conditions for (s1, s2, w0).
    Fourth {
        #[arg(long, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
    /// Von Neumann scan of the fourth-order schemes over eps; CSV on stdout.
    Stability {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        /// `lo:hi:step`, e.g. `0.01:0.3:0.01`.
        #[arg(long)]
        eps_range: String,
        /// Comma list of u/c values.
        #[arg(long, default_value = "0")]
        u: String,
    },
    /// Reproduce one of the reference tables 1..7.
    Tables {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=7))]
        table: u8,
    },
}

fn eps_range(s: &str) -> Result<Vec<f64>> {
    let p: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = p[..] else { bail!("eps range must be lo:hi:step, got '{s}'") };
    let (lo, hi, step) = (parse_number(lo)?, parse_number(hi)?, parse_number(step)?);
    if !(step > 0.0 && hi >= lo) {
        bail!("eps range needs lo <= hi and a positive step");
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

fn print_report(r: &ErrorReport) {
    let plb = r.pairwise_lb();
    let pfd = r.pairwise_fd();
    let show = |v: Option<f64>| v.map(sci4).unwrap_or_else(|| "-".into());
    let rate = |p: &Option<Vec<f64>>, i: usize| {
        if i == 0 {
            "-".to_string()
        } else {
            p.as_ref().map(|p| format!("{:.4}", p[i - 1])).unwrap_or_else(|| "-".into())
        }
    };
    println!("{:>10} {:>10} {:>8} {:>8} {:>11} {:>7} {:>11} {:>7} {:>9}", "dx", "dt", "a", "b", "rmse_lb", "cr", "rmse_fd", "cr", "lb/fd");
    for (i, row) in r.rows.iter().enumerate() {
        println!(
            "{:>10} {:>10} {:>8.5} {:>8.5} {:>11} {:>7} {:>11} {:>7} {:>9}",
            format!("1/{}", (1.0 / row.res.dx).round()),
            format!("{:.3e}", row.res.dt),
            row.res.a,
            row.res.b,
            show(row.rmse_lb),
            rate(&plb, i),
            show(row.rmse_fd),
            rate(&pfd, i),
            row.lb_fd_dev.map(|d| format!("{d:.1e}")).unwrap_or_else(|| "-".into())
        );
    }
    let fit = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    println!("least-squares CR: lb {} fd {}  ({:.1} s)", fit(r.fit_lb()), fit(r.fit_fd()), r.total_seconds());
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { config, output } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if output.is_some() {
                cfg.output = output;
            }
            let report = run_experiment(&cfg)?;
            print_report(&report);
            Ok(true)
        }
        Cmd::Derive { config, resolution, moment } => {
            let cfg = RunConfig::from_file(&config)?;
            let res = cfg.resolutions()?;
            let r = res.get(resolution).ok_or_else(|| anyhow!("sweep has {} resolutions", res.len()))?;
            let m = model_for(&cfg, r)?;
            let moments: Vec<usize> = match moment {
                Some(j) => vec![j],
                None => (0..m.n_conserved()).collect(),
            };
            for j in moments {
                let s = derive_scheme(&m, j, DeriveOptions::default()).with_context(|| format!("moment {j}"))?;
                print!("{}", s.dump());
            }
            Ok(true)
        }
        Cmd::Fourth { eps, a, b } => {
            let roots = all_roots(a, b, eps);
            if roots.is_empty() {
                bail!("no admissible (s1, s2, w0) at eps = {eps}, (a, b) = ({a}, {b})");
            }
            println!("s1,s2,w0,vartheta,residual,max_rho_u0");
            for r in roots {
                let p = r.params;
                let (rho, _) = max_amplification(a, b, &p, 0.0);
                println!("{},{},{},{},{:e},{}", p.s1, p.s2, p.w0, vartheta(a, b, p.s1, p.w0), r.residual, rho);
            }
            Ok(true)
        }
        Cmd::Stability { a, b, eps_range: range, u } => {
            let eps = eps_range(&range)?;
            let us: Vec<f64> = u.split(',').map(parse_number).collect::<Result<_>>()?;
            let pts = stability_region(a, b, &eps, &us);
            print!("{}", stability_csv(&pts));
            let unstable = pts.iter().filter(|p| p.max_rho > 1.0 + STABILITY_TOL).count();
            eprintln!("{} points, {unstable} unstable or infeasible", pts.len());
            Ok(true)
        }
        Cmd::Tables { table } => {
            let (group, solver) = Group::of_table(table)?;
            let out = run_group(group, solver);
            print!("{}", out.text);
            for c in &out.checks {
                println!("{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            Ok(out.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
