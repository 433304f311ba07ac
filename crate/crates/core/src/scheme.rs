//! Derivation and evaluation of the multi-level finite-difference schemes equivalent to the
//! lattice Boltzmann model on its conserved moments.
//!
//! With `A = W (I - S)`, `B = W S`, `W = M Tbar M^{-1}` the lattice Boltzmann step reads
//! `m^{n+1} = A m^n + B Q^n + dt W F^n` in moment space (`Q` the equilibrium data, `F` the
//! source moments). Any monic stencil polynomial `r` of degree `D` with `r(A) = 0` on the
//! target row eliminates the non-conserved moments:
//!
//! ```text
//! m_j^{n+1} = -sum_{i<D} rho_i m_j^{n+1-D+i}
//!           + sum_{k<D} [ sum_{l<=k} rho_{D-k+l} A^l (B Q^{n-k} + dt W F^{n-k}) ]_j
//! ```
//!
//! `r` is the characteristic polynomial with the `x^{N-1}` factor removed.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::{RelaxationMatrix, TransformMatrix};
use crate::model::{LinearClosure, ModelSpec};
use crate::solver::LbSolver;
use crate::stencil::{
    build_tbar, build_w_a_b, char_poly, row_times, Stencil, DEFAULT_PRUNE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivationPath {
    /// Conserved relaxation rows replaced by the identity before elimination.
    Normalized,
    /// Original S; the other conserved moments are carried as known data through `A - A P_j`.
    Projected,
}

#[derive(Debug, Clone, Copy)]
pub struct DeriveOptions {
    pub path: DerivationPath,
    pub prune: f64,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions { path: DerivationPath::Normalized, prune: DEFAULT_PRUNE }
    }
}

/// Scheme for one conserved moment `m_j`.
///
/// `self_ops[k]` acts on `m_j^{n-k}`; `eq_ops[k][c]` on component `c` of the moment-space
/// equilibrium data at level `n-k`; `src_ops[k][c]` on the source moments (the factor dt is
/// included).
#[derive(Debug, Clone)]
pub struct MultiLevelScheme {
    pub target: usize,
    pub q: usize,
    pub dim: usize,
    pub self_ops: Vec<Stencil>,
    pub eq_ops: Vec<Vec<Stencil>>,
    pub src_ops: Vec<Vec<Stencil>>,
    /// Characteristic polynomial coefficients, ascending.
    pub gamma: Vec<Stencil>,
    pub model_hash: String,
    /// Number of conserved moments of the model the scheme came from.
    pub n_conserved: usize,
    transform: DMatrix<f64>,
}

/// Representation-independent form of a scheme.
///
/// The part of each population-space equilibrium operator lying in the span of the conserved
/// rows of M is moved onto the conserved moments themselves (those moments of the equilibrium
/// equal the moments of the state), leaving a residual orthogonal to the conserved rows.
#[derive(Debug, Clone)]
pub struct CanonicalScheme {
    /// `[lag][c]` for conserved moments c < N.
    pub conserved: Vec<Vec<Stencil>>,
    /// `[lag][i]` population-space equilibrium residual.
    pub eq_residual: Vec<Vec<Stencil>>,
    /// `[lag][i]` population-space source operators.
    pub src: Vec<Vec<Stencil>>,
}

impl CanonicalScheme {
    pub fn max_deviation(&self, other: &CanonicalScheme) -> f64 {
        let depth = self.conserved.len().max(other.conserved.len());
        let lvl = |v: &Vec<Vec<Stencil>>, k: usize, i: usize| v.get(k).and_then(|l| l.get(i)).cloned();
        let mut dev: f64 = 0.0;
        for k in 0..depth {
            for (a, b) in [(&self.conserved, &other.conserved), (&self.eq_residual, &other.eq_residual), (&self.src, &other.src)] {
                let width = a.first().map_or(0, Vec::len).max(b.first().map_or(0, Vec::len));
                for i in 0..width {
                    dev = dev.max(match (lvl(a, k, i), lvl(b, k, i)) {
                        (Some(x), Some(y)) => x.max_abs_diff(&y),
                        (Some(x), None) | (None, Some(x)) => x.max_abs(),
                        (None, None) => 0.0,
                    });
                }
            }
        }
        dev
    }
}

fn max_abs_vec(v: &[Stencil]) -> f64 {
    v.iter().fold(0.0, |m, s| m.max(s.max_abs()))
}

/// Row scaling that brings every transform row to unit max-norm; improves conditioning.
fn row_scales(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|r| 1.0 / m.row(r).amax()).collect()
}

/// Derive the scheme of conserved moment `j` (0-based).
pub fn derive_scheme(model: &ModelSpec, j: usize, opts: DeriveOptions) -> Result<MultiLevelScheme> {
    let n_cons = model.n_conserved();
    if j >= n_cons {
        return Err(Error::Parameter(format!("moment {j} is not conserved (N = {n_cons})")));
    }
    let q = model.q();
    let dim = model.lattice.dim();
    let thr = opts.prune;
    let m = model.transform.matrix();
    let d = row_scales(m);
    let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
    let scaled = TransformMatrix::new(&dm * m, n_cons, model.transform.flavor())?;
    let s = match opts.path {
        DerivationPath::Normalized => model.relaxation.normalized(),
        DerivationPath::Projected => model.relaxation.matrix().clone(),
    };
    // the similarity D S D^{-1} keeps the relaxation in the scaled basis
    let dinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(q, d.iter().map(|x| 1.0 / x)));
    let s_scaled = &dm * &s * &dinv;
    let tbar = build_tbar(&model.lattice, model.a(), model.b, model.propagation_check)?;
    let (w, a, b) = build_w_a_b(&scaled, &s_scaled, &tbar, thr)?;
    let (a_eff, b_eff) = match opts.path {
        DerivationPath::Normalized => (a, b),
        DerivationPath::Projected => {
            let mut p = DMatrix::<f64>::identity(q, q);
            for l in 0..n_cons {
                if l != j {
                    p[(l, l)] = 0.0;
                }
            }
            let at = a.right_mul_scalar(&p, thr);
            let abar = a.lincomb(1.0, &at, -1.0, thr);
            (at, b.lincomb(1.0, &abar, 1.0, thr))
        }
    };
    let cp = char_poly(&a_eff, thr);
    let shift = n_cons - 1;
    let scale = max_abs_vec(&cp.gamma).max(1.0);
    for (k, g) in cp.gamma.iter().take(shift).enumerate() {
        if g.max_abs() > 1e-9 * scale {
            return Err(Error::Structure(format!(
                "characteristic polynomial coefficient {k} should vanish but has size {:.3e}",
                g.max_abs()
            )));
        }
    }
    let rho: Vec<Stencil> = cp.gamma[shift..].to_vec();
    let depth = rho.len() - 1;

    // rows e_j^T A^l, l < depth
    let mut rows = Vec::with_capacity(depth);
    let mut cur: Vec<Stencil> = (0..q).map(|c| if c == j { Stencil::identity(dim) } else { Stencil::zero(dim) }).collect();
    for l in 0..depth {
        if l > 0 {
            cur = row_times(&cur, &a_eff, thr);
        }
        rows.push(cur.clone());
    }

    let mut self_ops = Vec::with_capacity(depth);
    let mut eq_ops = Vec::with_capacity(depth);
    let mut src_ops = Vec::with_capacity(depth);
    for k in 0..depth {
        self_ops.push(rho[depth - 1 - k].scale(-1.0).pruned(thr));
        let mut rk = vec![Stencil::zero(dim); q];
        for (l, row) in rows.iter().enumerate().take(k + 1) {
            let coef = &rho[depth - k + l];
            for c in 0..q {
                rk[c] = rk[c].add_pruned(&row[c].mul_pruned(coef, 0.0), 0.0);
            }
        }
        let eq = row_times(&rk, &b_eff, thr);
        let src = row_times(&rk, &w, thr);
        // undo the row scaling: op[c] = op'[c] d_c / d_j
        eq_ops.push(eq.iter().enumerate().map(|(c, s)| s.scale(d[c] / d[j]).pruned(thr)).collect::<Vec<_>>());
        src_ops.push(
            src.iter().enumerate().map(|(c, s)| s.scale(model.dt * d[c] / d[j]).pruned(thr)).collect::<Vec<_>>(),
        );
    }
    // gamma of the unscaled matrix is identical (similarity invariant)
    Ok(MultiLevelScheme {
        target: j,
        q,
        dim,
        self_ops,
        eq_ops,
        src_ops,
        gamma: cp.gamma,
        model_hash: model.hash(),
        n_conserved: n_cons,
        transform: m.clone(),
    })
}

impl MultiLevelScheme {
    /// History depth D: number of past levels read (the scheme spans D + 1 time levels).
    pub fn depth(&self) -> usize {
        self.self_ops.len()
    }

    pub fn levels(&self) -> usize {
        self.depth() + 1
    }

    /// Oldest lag with any nonzero operator, plus one.
    pub fn active_depth(&self) -> usize {
        (0..self.depth())
            .rev()
            .find(|&k| {
                !self.self_ops[k].is_empty()
                    || self.eq_ops[k].iter().any(|s| !s.is_empty())
                    || self.src_ops[k].iter().any(|s| !s.is_empty())
            })
            .map_or(0, |k| k + 1)
    }

    pub fn radius(&self) -> i32 {
        self.self_ops
            .iter()
            .chain(self.eq_ops.iter().flatten())
            .chain(self.src_ops.iter().flatten())
            .map(Stencil::radius)
            .max()
            .unwrap_or(0)
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Operators acting on population-space data: `P[k][i] = sum_c op[k][c] M[c][i]`.
    pub fn population_ops(&self) -> (Vec<Vec<Stencil>>, Vec<Vec<Stencil>>) {
        let conv = |ops: &Vec<Vec<Stencil>>| -> Vec<Vec<Stencil>> {
            ops.iter()
                .map(|lvl| {
                    (0..self.q)
                        .map(|i| {
                            let mut acc = Stencil::zero(self.dim);
                            for (c, s) in lvl.iter().enumerate() {
                                let mci = self.transform[(c, i)];
                                if mci != 0.0 {
                                    acc = acc.lincomb(1.0, s, mci, 0.0);
                                }
                            }
                            acc.pruned(DEFAULT_PRUNE)
                        })
                        .collect()
                })
                .collect()
        };
        (conv(&self.eq_ops), conv(&self.src_ops))
    }

    /// Largest coefficient difference to another scheme, compared in population space.
    pub fn max_deviation(&self, other: &MultiLevelScheme) -> f64 {
        let depth = self.depth().max(other.depth());
        let zero = Stencil::zero(self.dim);
        let (pe, ps) = self.population_ops();
        let (oe, os) = other.population_ops();
        let mut dev: f64 = 0.0;
        for k in 0..depth {
            let a = self.self_ops.get(k).unwrap_or(&zero);
            let b = other.self_ops.get(k).unwrap_or(&zero);
            dev = dev.max(a.max_abs_diff(b));
            for i in 0..self.q {
                let get = |v: &Vec<Vec<Stencil>>| v.get(k).map(|l| l[i].clone()).unwrap_or_else(|| zero.clone());
                dev = dev.max(get(&pe).max_abs_diff(&get(&oe)));
                dev = dev.max(get(&ps).max_abs_diff(&get(&os)));
            }
        }
        dev
    }

    pub fn canonical(&self) -> CanonicalScheme {
        let (pe, ps) = self.population_ops();
        let n = self.n_conserved;
        let mc = self.transform.rows(0, n).into_owned();
        let gram = &mc * mc.transpose();
        let r = mc.transpose() * gram.try_inverse().expect("conserved rows are independent");
        let mut conserved = Vec::with_capacity(self.depth());
        let mut eq_residual = Vec::with_capacity(self.depth());
        for (k, lvl) in pe.iter().enumerate() {
            let alpha: Vec<Stencil> = (0..n)
                .map(|c| {
                    let mut acc = Stencil::zero(self.dim);
                    for (i, st) in lvl.iter().enumerate() {
                        acc = acc.lincomb(1.0, st, r[(i, c)], 0.0);
                    }
                    acc
                })
                .collect();
            let resid: Vec<Stencil> = (0..self.q)
                .map(|i| {
                    let mut acc = lvl[i].clone();
                    for (c, a) in alpha.iter().enumerate() {
                        acc = acc.lincomb(1.0, a, -mc[(c, i)], 0.0);
                    }
                    acc.pruned(DEFAULT_PRUNE)
                })
                .collect();
            let cons: Vec<Stencil> = alpha
                .into_iter()
                .enumerate()
                .map(|(c, a)| if c == self.target { a.add_pruned(&self.self_ops[k], 0.0) } else { a }.pruned(DEFAULT_PRUNE))
                .collect();
            conserved.push(cons);
            eq_residual.push(resid);
        }
        CanonicalScheme { conserved, eq_residual, src: ps }
    }

    /// Residual of the constant-state consistency condition:
    /// every constant equilibrium vector must be reproduced.
    pub fn consistency_residual(&self) -> f64 {
        let mut res: f64 = 0.0;
        for c in 0..self.q {
            let mut sum: f64 = self.eq_ops.iter().map(|l| l[c].sum()).sum();
            if c == self.target {
                sum += self.self_ops.iter().map(Stencil::sum).sum::<f64>();
                sum -= 1.0;
            }
            res = res.max(sum.abs());
        }
        res
    }

    /// Collapse to a single scalar stencil per lag for a linear closure on the conserved field.
    pub fn fold_linear(&self, closure: &LinearClosure) -> FoldedScheme {
        let (pe, ps) = self.population_ops();
        let h = closure.eq.len().max(closure.src.len());
        let lags = self.depth() + h - 1;
        let mut out = vec![Stencil::zero(self.dim); lags.max(self.depth())];
        for k in 0..self.depth() {
            out[k] = out[k].add_pruned(&self.self_ops[k], 0.0);
            for (hh, eqh) in closure.eq.iter().enumerate() {
                for i in 0..self.q {
                    out[k + hh] = out[k + hh].add_pruned(&pe[k][i].mul_pruned(&eqh[i], 0.0), 0.0);
                }
            }
            for (hh, srch) in closure.src.iter().enumerate() {
                for i in 0..self.q {
                    out[k + hh] = out[k + hh].add_pruned(&ps[k][i].mul_pruned(&srch[i], 0.0), 0.0);
                }
            }
        }
        let stencils: Vec<Stencil> = out.into_iter().map(|s| s.pruned(DEFAULT_PRUNE)).collect();
        FoldedScheme { stencils, scheme_depth: self.depth() }
    }

    /// Plain-text dump: header lines followed by one CSV block per operator.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# gpmfd-scheme v1");
        let _ = writeln!(s, "# model_hash={}", self.model_hash);
        let _ = writeln!(s, "# target={}", self.target);
        let _ = writeln!(s, "# q={}", self.q);
        let _ = writeln!(s, "# n_conserved={}", self.n_conserved);
        let _ = writeln!(s, "# dim={}", self.dim);
        let _ = writeln!(s, "# depth={}", self.depth());
        let _ = writeln!(s, "# levels={}", self.levels());
        let _ = writeln!(
            s,
            "# transform={}",
            self.transform.transpose().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
        );
        for (k, g) in self.gamma.iter().enumerate() {
            let _ = write!(s, "[gamma k={k}]\n{}", g.to_csv());
        }
        for k in 0..self.depth() {
            let _ = write!(s, "[self lag={k}]\n{}", self.self_ops[k].to_csv());
            for c in 0..self.q {
                let _ = write!(s, "[eq lag={k} comp={c}]\n{}", self.eq_ops[k][c].to_csv());
                let _ = write!(s, "[src lag={k} comp={c}]\n{}", self.src_ops[k][c].to_csv());
            }
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut blocks: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                if let Some((k, v)) = h.split_once('=') {
                    header.insert(k.to_string(), v.to_string());
                }
            } else if line.starts_with('[') {
                blocks.push((line.trim_matches(['[', ']']).to_string(), String::new()));
            } else if let Some(b) = blocks.last_mut() {
                b.1.push_str(line);
                b.1.push('\n');
            }
        }
        let get = |k: &str| -> Result<usize> {
            header
                .get(k)
                .ok_or_else(|| Error::Parse(format!("missing header '{k}'")))?
                .parse()
                .map_err(|e| Error::Parse(format!("header '{k}': {e}")))
        };
        let (target, q, dim, depth) = (get("target")?, get("q")?, get("dim")?, get("depth")?);
        let n_conserved = get("n_conserved")?;
        let tvals: Vec<f64> = header
            .get("transform")
            .ok_or_else(|| Error::Parse("missing transform".into()))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        if tvals.len() != q * q {
            return Err(Error::Parse("transform has the wrong size".into()));
        }
        let mut out = MultiLevelScheme {
            target,
            q,
            dim,
            self_ops: vec![Stencil::zero(dim); depth],
            eq_ops: vec![vec![Stencil::zero(dim); q]; depth],
            src_ops: vec![vec![Stencil::zero(dim); q]; depth],
            gamma: Vec::new(),
            model_hash: header.get("model_hash").cloned().unwrap_or_default(),
            n_conserved,
            transform: DMatrix::from_row_slice(q, q, &tvals),
        };
        for (name, body) in blocks {
            let st = Stencil::from_csv(&body)?;
            let mut parts = name.split_whitespace();
            let kind = parts.next().unwrap_or("");
            let mut kv = std::collections::HashMap::new();
            for p in parts {
                if let Some((k, v)) = p.split_once('=') {
                    kv.insert(k, v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
                }
            }
            let idx = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Parse(format!("block '{name}' lacks {k}")));
            match kind {
                "gamma" => {
                    let k = idx("k")?;
                    if out.gamma.len() <= k {
                        out.gamma.resize(k + 1, Stencil::zero(dim));
                    }
                    out.gamma[k] = st;
                }
                "self" => out.self_ops[idx("lag")?] = st,
                "eq" => out.eq_ops[idx("lag")?][idx("comp")?] = st,
                "src" => out.src_ops[idx("lag")?][idx("comp")?] = st,
                _ => return Err(Error::Parse(format!("unknown block '{name}'"))),
            }
        }
        Ok(out)
    }
}

/// Scalar multi-level scheme `phi^{n+1} = sum_k S_k phi^{n-k}`.
#[derive(Debug, Clone)]
pub struct FoldedScheme {
    pub stencils: Vec<Stencil>,
    scheme_depth: usize,
}

impl FoldedScheme {
    /// Number of past levels of the conserved field read per step.
    pub fn lags(&self) -> usize {
        self.stencils.len()
    }

    /// History depth of the underlying unfolded scheme.
    pub fn scheme_depth(&self) -> usize {
        self.scheme_depth
    }

    /// Advance a periodic history (front = newest) by one level.
    pub fn step(&self, grid: &Grid, history: &mut VecDeque<Vec<f64>>) -> Result<()> {
        if history.len() < self.lags() {
            return Err(Error::Bootstrap(format!(
                "folded scheme needs {} levels of history, have {}",
                self.lags(),
                history.len()
            )));
        }
        let mut out = vec![0.0; grid.len()];
        let terms: Vec<(&Stencil, &[f64])> =
            self.stencils.iter().enumerate().map(|(k, s)| (s, history[k].as_slice())).collect();
        apply_stencils_acc(&terms, grid, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0, what: "folded scheme produced a non-finite value".into() });
        }
        history.push_front(out);
        history.truncate(self.lags());
        Ok(())
    }
}

/// `out += sum_k S_k * input_k` on a periodic grid, one output row at a time.
pub fn apply_stencils_acc(terms: &[(&Stencil, &[f64])], grid: &Grid, out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    // taps sorted by (term, row offset) so each input row is visited once per output row
    let mut taps: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (t, (s, _)) in terms.iter().enumerate() {
        for &(z, c) in s.taps() {
            taps.push((t, z[1].rem_euclid(ny as i32) as usize, z[0].rem_euclid(nx as i32) as usize, c));
        }
    }
    taps.sort_by_key(|&(t, dy, dx, _)| (t, dy, dx));
    let mut groups: Vec<(usize, usize, &[(usize, usize, usize, f64)])> = Vec::new();
    let mut rest = taps.as_slice();
    while let Some(&(t, dy, _, _)) = rest.first() {
        let len = rest.iter().take_while(|g| g.0 == t && g.1 == dy).count();
        groups.push((t, dy, &rest[..len]));
        rest = &rest[len..];
    }
    for y in 0..ny {
        let orow = &mut out[y * nx..(y + 1) * nx];
        for (t, dy, taps) in &groups {
            let ys = (y + dy) % ny;
            let irow = &terms[*t].1[ys * nx..(ys + 1) * nx];
            for &(_, _, dx, c) in taps.iter() {
                let split = nx - dx;
                for (o, i) in orow[..split].iter_mut().zip(&irow[dx..]) {
                    *o += c * i;
                }
                for (o, i) in orow[split..].iter_mut().zip(&irow[..dx]) {
                    *o += c * i;
                }
            }
        }
    }
}

/// `out += S * input` on a grid that is periodic in both directions.
pub fn apply_stencil_acc(s: &Stencil, grid: &Grid, input: &[f64], out: &mut [f64]) {
    apply_stencils_acc(&[(s, input)], grid, out);
}

/// History buffers of the unfolded schemes (front = newest level).
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub grid: Grid,
    /// `[lag][j][site]`
    pub conserved: VecDeque<Vec<Vec<f64>>>,
    /// population-space equilibrium data per level, direction-major
    pub eq: VecDeque<Vec<f64>>,
    pub src: VecDeque<Vec<f64>>,
    /// time level of the newest entry
    pub level: usize,
}

impl SchemeState {
    pub fn newest(&self) -> &[Vec<f64>] {
        &self.conserved[0]
    }
}

/// The N conserved-moment schemes of one model, advanced together.
#[derive(Debug, Clone)]
pub struct GpmfdSystem {
    pub model: ModelSpec,
    pub schemes: Vec<MultiLevelScheme>,
    pop_eq: Vec<Vec<Vec<Stencil>>>,
    pop_src: Vec<Vec<Vec<Stencil>>>,
}

impl GpmfdSystem {
    pub fn derive(model: &ModelSpec, opts: DeriveOptions) -> Result<Self> {
        let schemes = (0..model.n_conserved()).map(|j| derive_scheme(model, j, opts)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_schemes(model.clone(), schemes))
    }

    pub fn from_schemes(model: ModelSpec, schemes: Vec<MultiLevelScheme>) -> Self {
        let (pop_eq, pop_src) = schemes.iter().map(|s| s.population_ops()).unzip();
        GpmfdSystem { model, schemes, pop_eq, pop_src }
    }

    pub fn depth(&self) -> usize {
        self.schemes.iter().map(MultiLevelScheme::depth).max().unwrap_or(0)
    }

    /// Advance one level. Where `mask[site]` is false the conserved values are taken from
    /// `external` instead (used next to walls, where the scheme does not apply).
    pub fn advance(&self, state: &mut SchemeState, external: Option<(&[bool], &[Vec<f64>])>) -> Result<()> {
        let depth = self.depth();
        if state.conserved.len() < depth || state.eq.len() < depth || state.src.len() < depth {
            return Err(Error::Bootstrap(format!(
                "scheme needs {depth} history levels, buffer holds {}",
                state.conserved.len().min(state.eq.len()).min(state.src.len())
            )));
        }
        let grid = &state.grid;
        let n = grid.len();
        let q = self.model.q();
        let mut next = Vec::with_capacity(self.schemes.len());
        for (jj, sch) in self.schemes.iter().enumerate() {
            let mut out = vec![0.0; n];
            let mut terms: Vec<(&Stencil, &[f64])> = Vec::new();
            for k in 0..sch.depth() {
                terms.push((&sch.self_ops[k], &state.conserved[k][sch.target]));
                for i in 0..q {
                    let pe = &self.pop_eq[jj][k][i];
                    if !pe.is_empty() {
                        terms.push((pe, &state.eq[k][i * n..(i + 1) * n]));
                    }
                    let ps = &self.pop_src[jj][k][i];
                    if !ps.is_empty() {
                        terms.push((ps, &state.src[k][i * n..(i + 1) * n]));
                    }
                }
            }
            apply_stencils_acc(&terms, grid, &mut out);
            if let Some((mask, ext)) = external {
                for s in 0..n {
                    if !mask[s] {
                        out[s] = ext[sch.target][s];
                    }
                }
            }
            next.push(out);
        }
        // reorder to conserved index order
        let mut cons = vec![Vec::new(); self.model.n_conserved()];
        for (sch, v) in self.schemes.iter().zip(next) {
            cons[sch.target] = v;
        }
        if cons.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { step: state.level + 1, what: "scheme produced a non-finite value".into() });
        }
        // the oldest level has been consumed; recycle its buffers
        let recycle = state.eq.len() >= depth;
        let mut eq = if recycle { state.eq.pop_back().unwrap() } else { vec![0.0; q * n] };
        let mut src = if recycle { state.src.pop_back().unwrap() } else { vec![0.0; q * n] };
        let ctx = self.model.context(grid);
        self.model.closure.evaluate(&ctx, &cons, Some(&state.conserved[0]), &mut eq, &mut src);
        state.conserved.push_front(cons);
        state.eq.push_front(eq);
        state.src.push_front(src);
        state.conserved.truncate(depth);
        state.eq.truncate(depth);
        state.src.truncate(depth);
        state.level += 1;
        Ok(())
    }
}

/// Run `depth - 1` lattice Boltzmann steps and record every level the scheme needs.
/// The solver is left at the newest recorded level.
pub fn bootstrap_from_lb(system: &GpmfdSystem, lb: &mut LbSolver) -> Result<SchemeState> {
    let depth = system.depth();
    if depth < 2 {
        return Err(Error::Bootstrap(format!(
            "scheme with {} time levels needs no start-up steps; zero bootstrap steps is not meaningful",
            depth + 1
        )));
    }
    let mut st = SchemeState {
        grid: lb.grid().clone(),
        conserved: VecDeque::new(),
        eq: VecDeque::new(),
        src: VecDeque::new(),
        level: lb.step_count(),
    };
    for k in 0..depth {
        let (c, e, s) = lb.level_data()?;
        st.conserved.push_front(c.to_vec());
        st.eq.push_front(e.to_vec());
        st.src.push_front(s.to_vec());
        st.level = lb.step_count();
        if k + 1 < depth {
            lb.step()?;
        }
    }
    Ok(st)
}

/// Folded-scheme history from a lattice Boltzmann start-up; the level before the first is
/// taken equal to the first, matching the solver's zero initial time derivative.
pub fn bootstrap_folded_from_lb(folded: &FoldedScheme, lb: &mut LbSolver) -> Result<VecDeque<Vec<f64>>> {
    let depth = folded.scheme_depth();
    if depth < 2 {
        return Err(Error::Bootstrap("zero bootstrap steps requested".into()));
    }
    let mut h = VecDeque::new();
    for k in 0..depth {
        h.push_front(lb.conserved()[0].clone());
        if k + 1 < depth {
            lb.step()?;
        }
    }
    while h.len() < folded.lags() {
        let oldest = h.back().cloned().expect("non-empty history");
        h.push_back(oldest);
    }
    h.truncate(folded.lags());
    Ok(h)
}

/// Equivalent model `(N M, N S N^{-1})` for a block-lower-triangular `N` that leaves the
/// conserved rows unchanged.
pub fn equivalent_model(model: &ModelSpec, nmat: &DMatrix<f64>) -> Result<ModelSpec> {
    let q = model.q();
    let n = model.n_conserved();
    if nmat.nrows() != q || nmat.ncols() != q {
        return Err(Error::Dimension(format!("N must be {q}x{q}")));
    }
    for i in 0..n {
        for l in n..q {
            if nmat[(i, l)] != 0.0 {
                return Err(Error::Structure(format!("N is not block lower triangular: entry ({i},{l}) = {}", nmat[(i, l)])));
            }
        }
    }
    let m1 = nmat * model.transform.matrix();
    for i in 0..n {
        let diff = (m1.row(i) - model.transform.matrix().row(i)).amax();
        if diff > 1e-12 * model.transform.matrix().row(i).amax() {
            return Err(Error::Structure(format!("N changes conserved row {i}")));
        }
    }
    let ninv = nmat.clone().lu().try_inverse().ok_or_else(|| Error::Singular("N is singular".into()))?;
    let s1 = nmat * model.relaxation.matrix() * &ninv;
    let t1 = TransformMatrix::new(m1, n, model.transform.flavor())?;
    // clear round-off in entries that must vanish structurally
    let mut s1 = s1;
    for i in 0..n {
        for l in (i + 1)..q {
            if s1[(i, l)].abs() < 1e-13 {
                s1[(i, l)] = 0.0;
            }
        }
    }
    let r1 = RelaxationMatrix::new(s1, &t1)?;
    model.with_transform(t1, r1)
}

/// Maximum canonical-form deviation between schemes derived under two relaxation matrices that
/// differ only in their conserved rows. Returns an error if the non-conserved part differs.
pub fn relaxation_independence_check(model: &ModelSpec, other_s: &DMatrix<f64>, opts: DeriveOptions) -> Result<f64> {
    let n = model.n_conserved();
    let q = model.q();
    let s = model.relaxation.matrix();
    for i in n..q {
        for l in n..q {
            if (s[(i, l)] - other_s[(i, l)]).abs() > 0.0 {
                return Err(Error::Parameter("relaxation matrices differ outside the conserved rows".into()));
            }
        }
    }
    let other = model.with_transform(model.transform.clone(), RelaxationMatrix::new(other_s.clone(), &model.transform)?)?;
    let mut dev: f64 = 0.0;
    for j in 0..n {
        let a = derive_scheme(model, j, opts)?;
        let b = derive_scheme(&other, j, opts)?;
        dev = dev.max(a.canonical().max_deviation(&b.canonical()));
    }
    Ok(dev)
}

/// Side-by-side run of the solver and the schemes; returns the largest relative deviation of
/// the conserved fields over `steps` scheme steps after the start-up.
pub fn equivalence_run(system: &GpmfdSystem, mut lb: LbSolver, steps: usize) -> Result<f64> {
    let mut st = bootstrap_from_lb(system, &mut lb)?;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        lb.step()?;
        system.advance(&mut st, None)?;
        let lbc = lb.conserved();
        for (a, b) in lbc.iter().zip(st.newest()) {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(d / scale);
        }
    }
    Ok(worst)
}
