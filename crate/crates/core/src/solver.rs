//! General-propagation MRT lattice Boltzmann solver.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{Grid, Walls};
use crate::model::ModelSpec;
use crate::stencil::{propagation_weights, Stencil};

/// Collision `f* = eq + A (f - eq) + dt src` with `A = M^{-1} (I - S) M`.
#[derive(Debug, Clone)]
struct Collision {
    q: usize,
    a: Vec<f64>, // q x q, row-major
    /// `A = U V` with U q x r and V r x q when the rank r is small (most rates equal to one).
    low_rank: Option<(usize, Vec<f64>, Vec<f64>)>,
}

impl Collision {
    fn new(model: &ModelSpec) -> Self {
        let q = model.q();
        let ims = DMatrix::<f64>::identity(q, q) - model.relaxation.matrix();
        let right = &ims * model.transform.matrix();
        let full = model.transform.inverse() * &right;
        let mut a = vec![0.0; q * q];
        for i in 0..q {
            for k in 0..q {
                a[i * q + k] = full[(i, k)];
            }
        }
        let rows: Vec<usize> = (0..q).filter(|&r| right.row(r).iter().any(|v| *v != 0.0)).collect();
        let dense = a.iter().filter(|v| **v != 0.0).count();
        let low_rank = (2 * rows.len() * q < dense).then(|| {
            let r = rows.len();
            let minv = model.transform.inverse();
            let mut u = vec![0.0; q * r];
            let mut v = vec![0.0; r * q];
            for (j, &row) in rows.iter().enumerate() {
                for i in 0..q {
                    u[i * r + j] = minv[(i, row)];
                    v[j * q + i] = right[(row, i)];
                }
            }
            (r, u, v)
        });
        Collision { q, a, low_rank }
    }
}

/// Closure folded into the collision: `f*_i = sum_k A_ik f_k + sum_h T_hi phi^{n-h}` with
/// `T_hi = sum_k (I - A)_ik eq_hk + dt src_hi`, so equilibria and sources are never stored.
#[derive(Debug, Clone)]
struct FusedClosure {
    levels: usize,
    /// Per direction: taps `(level, row offset, column offset, weight)` grouped by (level, row).
    taps: Vec<Vec<(usize, usize, usize, f64)>>,
}

impl FusedClosure {
    fn new(model: &ModelSpec, grid: &Grid, col: &Collision) -> Option<Self> {
        if grid.walls != Walls::None || model.n_conserved() != 1 {
            return None;
        }
        let lin = model.closure.linear_form(&model.context(grid))?;
        let levels = lin.eq.len().max(lin.src.len());
        if levels == 0 || levels > 2 {
            return None;
        }
        let (q, dim) = (model.q(), model.lattice.dim());
        let (nx, ny) = (grid.nx as i32, grid.ny as i32);
        let mut taps = vec![Vec::new(); q];
        for (i, t) in taps.iter_mut().enumerate() {
            for h in 0..levels {
                let mut st = lin.src.get(h).map(|s| s[i].scale(model.dt)).unwrap_or_else(|| Stencil::zero(dim));
                if let Some(eq) = lin.eq.get(h) {
                    for (k, e) in eq.iter().enumerate() {
                        let c = if i == k { 1.0 } else { 0.0 } - col.a[i * q + k];
                        if c != 0.0 {
                            st = st.add_pruned(&e.scale(c), 0.0);
                        }
                    }
                }
                for &(z, c) in st.taps() {
                    t.push((h, z[1].rem_euclid(ny) as usize, z[0].rem_euclid(nx) as usize, c));
                }
            }
            t.sort_by_key(|&(h, dy, dx, _)| (h, dy, dx));
        }
        Some(FusedClosure { levels, taps })
    }

    /// One grid row of post-collision populations.
    fn collide_row(&self, col: &Collision, grid: &Grid, y: usize, f: &[f64], phi: [&[f64]; 2], scratch: &mut Vec<f64>, out: &mut [f64]) {
        let (q, n, nx, ny) = (col.q, grid.len(), grid.nx, grid.ny);
        let base = y * nx;
        let frow = |k: usize| &f[k * n + base..k * n + base + nx];
        if let Some((r, u, v)) = &col.low_rank {
            scratch.clear();
            scratch.resize(r * nx, 0.0);
            for j in 0..*r {
                let m = &mut scratch[j * nx..(j + 1) * nx];
                for k in 0..q {
                    let c = v[j * q + k];
                    if c != 0.0 {
                        for (o, x) in m.iter_mut().zip(frow(k)) {
                            *o += c * x;
                        }
                    }
                }
            }
            for i in 0..q {
                let o = &mut out[i * n + base..i * n + base + nx];
                o.fill(0.0);
                for j in 0..*r {
                    let c = u[i * r + j];
                    if c != 0.0 {
                        for (o, x) in o.iter_mut().zip(&scratch[j * nx..(j + 1) * nx]) {
                            *o += c * x;
                        }
                    }
                }
            }
        } else {
            for i in 0..q {
                let o = &mut out[i * n + base..i * n + base + nx];
                o.fill(0.0);
                for k in 0..q {
                    let c = col.a[i * q + k];
                    if c != 0.0 {
                        for (o, x) in o.iter_mut().zip(frow(k)) {
                            *o += c * x;
                        }
                    }
                }
            }
        }
        for (i, taps) in self.taps.iter().enumerate() {
            let o = &mut out[i * n + base..i * n + base + nx];
            for &(h, dy, dx, c) in taps {
                let ys = (y + dy) % ny;
                let irow = &phi[h][ys * nx..(ys + 1) * nx];
                let split = nx - dx;
                for (o, x) in o[..split].iter_mut().zip(&irow[dx..]) {
                    *o += c * x;
                }
                for (o, x) in o[split..].iter_mut().zip(&irow[..dx]) {
                    *o += c * x;
                }
            }
        }
    }
}

/// Apply the collision to direction-major fields in place of `out`.
pub fn collide(model: &ModelSpec, f: &[f64], eq: &[f64], src: &[f64], out: &mut [f64]) {
    let col = Collision::new(model);
    collide_with(&col, model.dt, f, eq, src, out);
}

const BLOCK: usize = 64;

fn collide_with(col: &Collision, dt: f64, f: &[f64], eq: &[f64], src: &[f64], out: &mut [f64]) {
    let q = col.q;
    let n = f.len() / q;
    let mut fne = vec![[0.0f64; BLOCK]; q];
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        for i in 0..q {
            let (fi, ei) = (&f[i * n + start..i * n + start + len], &eq[i * n + start..i * n + start + len]);
            for ((d, a), b) in fne[i][..len].iter_mut().zip(fi).zip(ei) {
                *d = a - b;
            }
        }
        for i in 0..q {
            let o = &mut out[i * n + start..i * n + start + len];
            let ei = &eq[i * n + start..i * n + start + len];
            let si = &src[i * n + start..i * n + start + len];
            for ((o, e), s) in o.iter_mut().zip(ei).zip(si) {
                *o = e + dt * s;
            }
            for (k, row) in fne.iter().enumerate() {
                let c = col.a[i * q + k];
                if c == 0.0 {
                    continue;
                }
                for (o, v) in o.iter_mut().zip(&row[..len]) {
                    *o += c * v;
                }
            }
        }
        start += len;
    }
}

/// General propagation `f_i(x) = p0 f*_i(x) + p_{-1} f*_i(x - e_i) + p_{+1} f*_i(x + e_i)`.
///
/// A source point beyond a wall is replaced by `f*_{opp(i)}(x)` (halfway bounce-back).
pub fn propagate(model: &ModelSpec, grid: &Grid, fstar: &[f64], out: &mut [f64]) {
    let lat = &model.lattice;
    let (p0, pm, pp) = propagation_weights(lat.a(), model.b);
    let n = grid.len();
    let (nx, ny) = (grid.nx, grid.ny);
    for (i, e) in lat.directions().iter().enumerate() {
        let fi = &fstar[i * n..(i + 1) * n];
        let fo = &fstar[lat.opposite(i) * n..(lat.opposite(i) + 1) * n];
        let dst = &mut out[i * n..(i + 1) * n];
        if e[0] == 0 && e[1] == 0 {
            dst.copy_from_slice(fi);
            continue;
        }
        let ex = e[0].rem_euclid(nx as i32) as usize;
        let row = |yy: i64| -> Option<usize> {
            match grid.walls {
                Walls::None => Some(yy.rem_euclid(ny as i64) as usize),
                Walls::HalfwayY => (0..ny as i64).contains(&yy).then_some(yy as usize),
            }
        };
        for y in 0..ny {
            let ym = row(y as i64 - e[1] as i64);
            let yp = row(y as i64 + e[1] as i64);
            let base = y * nx;
            let own = &fi[base..base + nx];
            let bounce = &fo[base..base + nx];
            let d = &mut dst[base..base + nx];
            for (x, o) in d.iter_mut().enumerate() {
                *o = p0 * own[x];
            }
            // f*(x - e) contributes with weight pm, f*(x + e) with pp
            for (w, src_row, shift) in [(pm, ym, nx - ex), (pp, yp, ex)] {
                match src_row {
                    Some(r) => {
                        let sr = &fi[r * nx..(r + 1) * nx];
                        let split = nx - shift % nx;
                        let shift = shift % nx;
                        for (o, v) in d[..split].iter_mut().zip(&sr[shift..]) {
                            *o += w * v;
                        }
                        for (o, v) in d[split..].iter_mut().zip(&sr[..shift]) {
                            *o += w * v;
                        }
                    }
                    None => {
                        for (o, v) in d.iter_mut().zip(bounce) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbSolver {
    model: ModelSpec,
    grid: Grid,
    col: Collision,
    fused: Option<FusedClosure>,
    f: Vec<f64>,
    fstar: Vec<f64>,
    eq: Vec<f64>,
    src: Vec<f64>,
    conserved: Vec<Vec<f64>>,
    previous: Option<Vec<Vec<f64>>>,
    prepared: bool,
    /// Whether `eq` and `src` hold the current level.
    evaluated: bool,
    scratch: Vec<f64>,
    step: usize,
}

impl LbSolver {
    /// Start from given populations (direction-major, q * n values).
    pub fn from_populations(model: ModelSpec, grid: Grid, f: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        let q = model.q();
        if f.len() != q * n {
            return Err(Error::Dimension(format!("expected {} populations, got {}", q * n, f.len())));
        }
        if model.lattice.dim() == 1 && grid.ny != 1 {
            return Err(Error::Dimension("a one-dimensional lattice needs ny = 1".into()));
        }
        if grid.walls != Walls::None && model.lattice.dim() == 1 {
            return Err(Error::Parameter("walls need a two-dimensional lattice".into()));
        }
        let nc = model.n_conserved();
        let col = Collision::new(&model);
        Ok(LbSolver {
            fused: FusedClosure::new(&model, &grid, &col),
            col,
            model,
            grid,
            f,
            fstar: vec![0.0; q * n],
            eq: vec![0.0; q * n],
            src: vec![0.0; q * n],
            conserved: vec![vec![0.0; n]; nc],
            previous: None,
            prepared: false,
            evaluated: false,
            scratch: Vec::new(),
            step: 0,
        })
    }

    /// Start at equilibrium with the given conserved-moment fields.
    pub fn from_conserved(model: ModelSpec, grid: Grid, conserved: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.len();
        let q = model.q();
        if conserved.len() != model.n_conserved() || conserved.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("initial conserved fields do not match model and grid".into()));
        }
        let mut eq = vec![0.0; q * n];
        let mut src = vec![0.0; q * n];
        model.closure.evaluate(&model.context(&grid), &conserved, None, &mut eq, &mut src);
        Self::from_populations(model, grid, eq)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn populations(&self) -> &[f64] {
        &self.f
    }
    pub fn step_count(&self) -> usize {
        self.step
    }
    pub fn time(&self) -> f64 {
        self.step as f64 * self.model.dt
    }

    /// Conserved moments of the current populations.
    pub fn conserved(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.grid.len()]; self.model.n_conserved()];
        self.moments_into(&mut out);
        out
    }

    fn moments_into(&self, out: &mut [Vec<f64>]) {
        let n = self.grid.len();
        let m = self.model.transform.matrix();
        for (j, o) in out.iter_mut().enumerate() {
            o.fill(0.0);
            for i in 0..self.model.q() {
                let c = m[(j, i)];
                if c == 0.0 {
                    continue;
                }
                let fi = &self.f[i * n..(i + 1) * n];
                for (v, x) in o.iter_mut().zip(fi) {
                    *v += c * x;
                }
            }
        }
    }

    /// Evaluate the conserved moments at the current time level.
    pub fn prepare(&mut self) -> Result<()> {
        if self.prepared {
            return Ok(());
        }
        let mut cons = std::mem::take(&mut self.conserved);
        self.moments_into(&mut cons);
        if let Some((j, _)) = cons.iter().enumerate().find(|(_, c)| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { step: self.step, what: format!("conserved moment {j} is not finite") });
        }
        self.conserved = cons;
        self.prepared = true;
        self.evaluated = false;
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        self.prepare()?;
        if !self.evaluated {
            let ctx = self.model.context(&self.grid);
            self.model.closure.evaluate(&ctx, &self.conserved, self.previous.as_deref(), &mut self.eq, &mut self.src);
            self.evaluated = true;
        }
        Ok(())
    }

    /// Conserved fields, equilibrium data and source (population space) at the current level.
    pub fn level_data(&mut self) -> Result<(&[Vec<f64>], &[f64], &[f64])> {
        self.evaluate()?;
        Ok((&self.conserved, &self.eq, &self.src))
    }

    pub fn step(&mut self) -> Result<()> {
        self.prepare()?;
        match &self.fused {
            // a missing history level falls back to the closure's own start-up rule
            Some(fz) if fz.levels == 1 || self.previous.is_some() => {
                let phi = self.conserved[0].as_slice();
                let prev = self.previous.as_ref().map_or(phi, |p| p[0].as_slice());
                for y in 0..self.grid.ny {
                    fz.collide_row(&self.col, &self.grid, y, &self.f, [phi, prev], &mut self.scratch, &mut self.fstar);
                }
            }
            _ => {
                self.evaluate()?;
                collide_with(&self.col, self.model.dt, &self.f, &self.eq, &self.src, &mut self.fstar);
            }
        }
        propagate(&self.model, &self.grid, &self.fstar, &mut self.f);
        // the old history buffer becomes the next level's moment buffer
        let next = match self.previous.take() {
            Some(p) => p,
            None => self.conserved.clone(),
        };
        self.previous = Some(std::mem::replace(&mut self.conserved, next));
        self.prepared = false;
        self.evaluated = false;
        self.step += 1;
        Ok(())
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Overwrite the conserved history used by time-derivative terms.
    pub fn set_previous(&mut self, previous: Option<Vec<Vec<f64>>>) {
        self.previous = previous;
        self.evaluated = false;
    }
}
