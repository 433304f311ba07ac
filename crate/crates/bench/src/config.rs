//! Flat `key = value` run configuration.
//!
//! ```text
//! # diffusive Gauss hill, two resolutions
//! problem = gauss_hill
//! scaling = diffusive
//! dx = 1/80, 1/160
//! dt = 1/50
//! a = 1
//! b = 1
//! kappa = 1e-3, 1e-3, 1e-3, 2e-3
//! u = 0.01, 0.01
//! t_end = 2
//! ```
//!
//! Lists broadcast: a single `dt` is extended with the scaling rule, a single `a` or `b`
//! is used at every resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, bail, ensure, Context, Result};
use gpmrt_core::models::Scaling;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    GaussHill,
    Poiseuille,
    Cde1d,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::GaussHill => "gauss_hill",
            Problem::Poiseuille => "poiseuille",
            Problem::Cde1d => "cde1d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    Lb,
    Fd,
    Both,
}

impl SolverPath {
    pub fn lb(self) -> bool {
        self != SolverPath::Fd
    }
    pub fn fd(self) -> bool {
        self != SolverPath::Lb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub scaling: Scaling,
    pub dx: Vec<f64>,
    pub dt: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Diffusion tensor, row-major 2x2 (a scalar for cde1d is stored in `kappa[0][0]`).
    pub kappa: Option<[[f64; 2]; 2]>,
    /// Fixed relaxation-time block; with `b_over_a2` it determines (a, b) per resolution.
    pub s1: Option<[[f64; 2]; 2]>,
    pub b_over_a2: Option<f64>,
    pub u: [f64; 2],
    pub nu: Option<f64>,
    /// Body-force acceleration G along x.
    pub force: Option<f64>,
    pub eps: Option<f64>,
    /// Fourth-order root selection: the admissible root with s1 closest to this value.
    pub root_s1: Option<f64>,
    pub t_end: Option<f64>,
    pub steady_tol: f64,
    pub max_steps: usize,
    pub solver: SolverPath,
    pub output: Option<PathBuf>,
    /// Auxiliary source G_i on/off.
    pub source_term: bool,
    pub vartheta: Option<f64>,
    pub nx: usize,
    pub y0: f64,
    pub snapshots: bool,
}

/// One resolution of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub dx: f64,
    pub dt: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: Problem::GaussHill,
            scaling: Scaling::Diffusive,
            dx: Vec::new(),
            dt: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
            kappa: None,
            s1: None,
            b_over_a2: None,
            u: [0.0; 2],
            nu: None,
            force: None,
            eps: None,
            root_s1: None,
            t_end: None,
            steady_tol: 1e-10,
            max_steps: 50_000_000,
            solver: SolverPath::Both,
            output: None,
            source_term: true,
            vartheta: None,
            nx: 1,
            y0: 0.01,
            snapshots: false,
        }
    }
}

/// Parses `3`, `-2.5e-3` and fractions such as `1/80`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().with_context(|| format!("bad numerator in '{s}'"))?;
            let d: f64 = d.trim().parse().with_context(|| format!("bad denominator in '{s}'"))?;
            ensure!(d != 0.0, "zero denominator in '{s}'");
            n / d
        }
        None => s.parse().with_context(|| format!("'{s}' is not a number"))?,
    };
    ensure!(v.is_finite(), "'{s}' is not finite");
    Ok(v)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_number).collect()
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => bail!("'{other}' is not a boolean"),
    }
}

fn parse_tensor(s: &str) -> Result<[[f64; 2]; 2]> {
    let v = parse_list(s)?;
    match v.len() {
        1 => Ok([[v[0], 0.0], [0.0, v[0]]]),
        2 => Ok([[v[0], 0.0], [0.0, v[1]]]),
        4 => Ok([[v[0], v[1]], [v[2], v[3]]]),
        n => bail!("a 2x2 tensor takes 1, 2 or 4 entries, got {n}"),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", ln + 1))?;
            let k = k.trim().to_ascii_lowercase();
            if kv.insert(k.clone(), (ln + 1, v.trim().to_string())).is_some() {
                bail!("line {}: duplicate key '{k}'", ln + 1);
            }
        }
        let mut c = RunConfig::default();
        let mut kappa_scalar = false;
        for (k, (ln, v)) in &kv {
            let res: Result<()> = (|| {
                match k.as_str() {
                    "problem" => {
                        c.problem = match v.as_str() {
                            "gauss_hill" => Problem::GaussHill,
                            "poiseuille" => Problem::Poiseuille,
                            "cde1d" => Problem::Cde1d,
                            o => bail!("unknown problem '{o}' (gauss_hill | poiseuille | cde1d)"),
                        }
                    }
                    "scaling" => {
                        c.scaling = match v.as_str() {
                            "diffusive" => Scaling::Diffusive,
                            "acoustic" => Scaling::Acoustic,
                            o => bail!("unknown scaling '{o}' (diffusive | acoustic)"),
                        }
                    }
                    "solver" => {
                        c.solver = match v.as_str() {
                            "lb" => SolverPath::Lb,
                            "fd" => SolverPath::Fd,
                            "both" => SolverPath::Both,
                            o => bail!("unknown solver '{o}' (lb | fd | both)"),
                        }
                    }
                    "dx" => c.dx = parse_list(v)?,
                    "dt" => c.dt = parse_list(v)?,
                    "a" => c.a = parse_list(v)?,
                    "b" => c.b = parse_list(v)?,
                    "kappa" => {
                        kappa_scalar = !v.contains(',');
                        c.kappa = Some(parse_tensor(v)?)
                    }
                    "s1" => c.s1 = Some(parse_tensor(v)?),
                    "b_over_a2" => c.b_over_a2 = Some(parse_number(v)?),
                    "u" => {
                        let u = parse_list(v)?;
                        c.u = match u.len() {
                            1 => [u[0], 0.0],
                            2 => [u[0], u[1]],
                            n => bail!("u takes 1 or 2 entries, got {n}"),
                        }
                    }
                    "nu" => c.nu = Some(parse_number(v)?),
                    "force" => c.force = Some(parse_number(v)?),
                    "eps" => c.eps = Some(parse_number(v)?),
                    "root_s1" => c.root_s1 = Some(parse_number(v)?),
                    "t_end" => c.t_end = Some(parse_number(v)?),
                    "steady_tol" => c.steady_tol = parse_number(v)?,
                    "max_steps" => c.max_steps = v.parse().context("max_steps must be an integer")?,
                    "output" => c.output = Some(PathBuf::from(v)),
                    "source_term" => c.source_term = parse_bool(v)?,
                    "vartheta" => c.vartheta = Some(parse_number(v)?),
                    "nx" => c.nx = v.parse().context("nx must be an integer")?,
                    "y0" => c.y0 = parse_number(v)?,
                    "snapshots" => c.snapshots = parse_bool(v)?,
                    other => bail!("unknown key '{other}'"),
                }
                Ok(())
            })();
            res.with_context(|| format!("line {ln}"))?;
        }
        if c.problem == Problem::Cde1d && c.kappa.is_some() && !kappa_scalar {
            bail!("cde1d takes a scalar kappa");
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Time steps per resolution: explicit lists, or a single step extended by the scaling
    /// rule. cde1d derives dt from `eps = kappa dt / dx^2` when no dt is given.
    fn time_steps(&self) -> Result<Vec<f64>> {
        let n = self.dx.len();
        if self.dt.is_empty() {
            ensure!(self.problem == Problem::Cde1d, "dt is required");
            let eps = self.eps.ok_or_else(|| anyhow!("cde1d needs eps"))?;
            let k = self.kappa.ok_or_else(|| anyhow!("cde1d needs kappa"))?[0][0];
            return Ok(self.dx.iter().map(|dx| eps * dx * dx / k).collect());
        }
        let power = match self.scaling {
            Scaling::Diffusive => 2,
            Scaling::Acoustic => 1,
        };
        if self.dt.len() == 1 {
            let (dx0, dt0) = (self.dx[0], self.dt[0]);
            return Ok(self.dx.iter().map(|dx| dt0 * (dx / dx0).powi(power)).collect());
        }
        ensure!(self.dt.len() == n, "{} dt values for {n} dx values", self.dt.len());
        // dt / dx^p must be the same at every resolution
        let r0 = self.dt[0] / self.dx[0].powi(power);
        for (dx, dt) in self.dx.iter().zip(&self.dt) {
            let r = dt / dx.powi(power);
            ensure!(
                (r - r0).abs() <= 1e-9 * r0.abs(),
                "(dx, dt) = ({dx}, {dt}) breaks the {:?} scaling rule",
                self.scaling
            );
        }
        Ok(self.dt.clone())
    }

    fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
        match v.len() {
            1 => Ok(vec![v[0]; n]),
            m if m == n => Ok(v.to_vec()),
            m => bail!("{m} values of {what} for {n} resolutions"),
        }
    }

    /// The sweep with (a, b) per resolution. With `s1` and `b_over_a2`, (a, b) follow from
    /// the diffusion tensor.
    pub fn resolutions(&self) -> Result<Vec<Resolution>> {
        let dt = self.time_steps()?;
        let n = self.dx.len();
        let (a, b) = if self.a.is_empty() {
            let (Some(s1), Some(r), Some(k)) = (self.s1, self.b_over_a2, self.kappa) else {
                bail!("give a and b, or s1, b_over_a2 and kappa");
            };
            let to_m = |t: [[f64; 2]; 2]| nalgebra::DMatrix::from_row_slice(2, 2, &[t[0][0], t[0][1], t[1][0], t[1][1]]);
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for (dx, dt) in self.dx.iter().zip(&dt) {
                let (ai, bi) = crate::params::acoustic_ab_for_kappa(&to_m(k), *dx, *dt, &to_m(s1), 1.0, r)?;
                a.push(ai);
                b.push(bi);
            }
            (a, b)
        } else {
            ensure!(!self.b.is_empty(), "a is given without b");
            (Self::broadcast(&self.a, n, "a")?, Self::broadcast(&self.b, n, "b")?)
        };
        Ok((0..n).map(|i| Resolution { dx: self.dx[i], dt: dt[i], a: a[i], b: b[i] }).collect())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.dx.is_empty(), "dx is required");
        ensure!(self.dx.iter().all(|d| *d > 0.0), "dx must be positive");
        ensure!(self.dt.iter().all(|d| *d > 0.0), "dt must be positive");
        ensure!(self.nx >= 1, "nx must be at least 1");
        ensure!(self.steady_tol > 0.0, "steady_tol must be positive");
        let res = self.resolutions()?;
        for r in &res {
            ensure!(r.a > 0.0 && r.a <= 1.0, "a = {} outside (0, 1]", r.a);
        }
        match self.problem {
            Problem::GaussHill => {
                ensure!(self.kappa.is_some(), "gauss_hill needs kappa");
                ensure!(self.t_end.is_some(), "gauss_hill needs t_end");
            }
            Problem::Poiseuille => {
                let nu = self.nu.ok_or_else(|| anyhow!("poiseuille needs nu"))?;
                ensure!(self.force.is_some(), "poiseuille needs force");
                for r in &res {
                    // nu in lattice units
                    let nu_l = nu * r.dt / (r.dx * r.dx);
                    let hi = (6.0 * nu_l + r.a * r.a).min(1.0);
                    ensure!(
                        r.b >= r.a * r.a - 1e-14 && r.b <= hi + 1e-14,
                        "b = {} outside [a^2, min(1, 6 nu + a^2)] = [{}, {hi}] at dx = {}",
                        r.b,
                        r.a * r.a,
                        r.dx
                    );
                }
            }
            Problem::Cde1d => {
                ensure!(self.eps.is_some(), "cde1d needs eps");
                ensure!(self.kappa.is_some(), "cde1d needs kappa");
                ensure!(self.t_end.is_some(), "cde1d needs t_end");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = "problem = gauss_hill\nscaling = diffusive\ndx = 1/80, 1/160\ndt = 1/50 # base\n\
                         a = 1\nb = 1\nkappa = 1e-3, 1e-3, 1e-3, 2e-3\nu = 0.01, 0.01\nt_end = 2\n";

    #[test]
    fn fractions_and_broadcast() {
        let c = RunConfig::parse(GAUSS).unwrap();
        let r = c.resolutions().unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].dx, 1.0 / 160.0);
        assert!((r[1].dt - 1.0 / 200.0).abs() < 1e-18);
        assert_eq!((r[1].a, r[1].b), (1.0, 1.0));
        assert_eq!(c.kappa.unwrap()[1][1], 2e-3);
    }

    #[test]
    fn inconsistent_scaling_is_rejected() {
        let t = GAUSS.replace("dt = 1/50 # base", "dt = 1/50, 1/100");
        let e = RunConfig::parse(&t).unwrap_err();
        assert!(format!("{e:#}").contains("scaling rule"), "{e:#}");
    }

    #[test]
    fn unknown_keys_and_duplicates_fail() {
        assert!(RunConfig::parse(&format!("{GAUSS}colour = red\n")).is_err());
        assert!(RunConfig::parse(&format!("{GAUSS}a = 0.5\n")).is_err());
    }

    #[test]
    fn acoustic_ab_from_tensor() {
        let t = "problem = gauss_hill\nscaling = acoustic\ndx = 1/200, 1/300\ndt = 1/200, 1/300\n\
                 kappa = 0.625e-4, 0.625e-4, 0.625e-4, 1.25e-4\ns1 = 0.8, 0.4, 0.4, 1.2\nb_over_a2 = 1.2\nt_end = 1\n";
        let r = RunConfig::parse(t).unwrap().resolutions().unwrap();
        assert!((r[1].a - 0.375).abs() < 1e-12);
        assert!((r[1].b - 0.16875).abs() < 1e-12);
    }

    #[test]
    fn flow_b_range_is_enforced() {
        let base = "problem = poiseuille\ndx = 1/16\ndt = 1/50\nnu = 0.06\nforce = 0.048\na = 0.2\n";
        assert!(RunConfig::parse(&format!("{base}b = 0.36\n")).is_ok());
        assert!(RunConfig::parse(&format!("{base}b = 0.01\n")).is_err());
    }

    #[test]
    fn cde_dt_from_eps() {
        let t = "problem = cde1d\ndx = 1/10, 1/20\na = 1\nb = 1\neps = 0.16\nkappa = 0.08\nu = 1\nt_end = 2\n";
        let r = RunConfig::parse(t).unwrap().resolutions().unwrap();
        assert!((r[0].dt - 0.02).abs() < 1e-16);
        assert!((r[1].dt - 0.005).abs() < 1e-16);
    }
}
