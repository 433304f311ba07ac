//! Commutative ring of finite-difference stencils and matrices over it.
//!
//! A stencil is a finite map from lattice offsets to real coefficients and acts on a grid
//! function by `(S phi)(x) = sum_z S[z] * phi(x + z)`. Products are convolutions.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Offset, TransformMatrix};

/// Taps with magnitude at or below this are dropped by the default arithmetic.
pub const DEFAULT_PRUNE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    dim: usize,
    taps: Vec<(Offset, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct BBox {
    lo: Offset,
    hi: Offset,
}

impl BBox {
    fn empty() -> Self {
        BBox { lo: [i32::MAX; 2], hi: [i32::MIN; 2] }
    }
    fn is_empty(&self) -> bool {
        self.lo[0] > self.hi[0]
    }
    fn union(self, o: BBox) -> BBox {
        if self.is_empty() {
            return o;
        }
        if o.is_empty() {
            return self;
        }
        BBox {
            lo: [self.lo[0].min(o.lo[0]), self.lo[1].min(o.lo[1])],
            hi: [self.hi[0].max(o.hi[0]), self.hi[1].max(o.hi[1])],
        }
    }
    fn sum(self, o: BBox) -> BBox {
        if self.is_empty() || o.is_empty() {
            return BBox::empty();
        }
        BBox {
            lo: [self.lo[0] + o.lo[0], self.lo[1] + o.lo[1]],
            hi: [self.hi[0] + o.hi[0], self.hi[1] + o.hi[1]],
        }
    }
}

/// Dense accumulator over a bounding box; used to sum many convolutions before pruning once.
struct DenseAcc {
    bb: BBox,
    w: usize,
    data: Vec<f64>,
}

impl DenseAcc {
    fn new(bb: BBox) -> Self {
        if bb.is_empty() {
            return DenseAcc { bb, w: 0, data: Vec::new() };
        }
        let w = (bb.hi[0] - bb.lo[0] + 1) as usize;
        let h = (bb.hi[1] - bb.lo[1] + 1) as usize;
        DenseAcc { bb, w, data: vec![0.0; w * h] }
    }
    #[inline]
    fn idx(&self, z: Offset) -> usize {
        (z[1] - self.bb.lo[1]) as usize * self.w + (z[0] - self.bb.lo[0]) as usize
    }
    fn add_product(&mut self, a: &Stencil, b: &Stencil) {
        for &(za, ca) in &a.taps {
            for &(zb, cb) in &b.taps {
                let i = self.idx([za[0] + zb[0], za[1] + zb[1]]);
                self.data[i] += ca * cb;
            }
        }
    }
    fn add_scaled(&mut self, a: &Stencil, f: f64) {
        for &(z, c) in &a.taps {
            let i = self.idx(z);
            self.data[i] += f * c;
        }
    }
    fn finish(self, dim: usize, threshold: f64) -> Stencil {
        let mut taps = Vec::new();
        if !self.bb.is_empty() {
            // row-major over (y, x) would not give lexicographic (x, y) order, so sort afterwards
            for (k, &v) in self.data.iter().enumerate() {
                if v != 0.0 && v.abs() > threshold {
                    let x = self.bb.lo[0] + (k % self.w) as i32;
                    let y = self.bb.lo[1] + (k / self.w) as i32;
                    taps.push(([x, y], v));
                }
            }
            taps.sort_by(|p, q| p.0.cmp(&q.0));
        }
        Stencil { dim, taps }
    }
}

impl Stencil {
    pub fn zero(dim: usize) -> Self {
        Stencil { dim, taps: Vec::new() }
    }

    pub fn scalar(dim: usize, v: f64) -> Self {
        Self::from_taps(dim, [([0, 0], v)])
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// The shift operator T^z: `(T^z phi)(x) = phi(x + z)`.
    pub fn shift(dim: usize, z: Offset) -> Self {
        Self::from_taps(dim, [(z, 1.0)])
    }

    /// Build from possibly repeated offsets; repeated offsets are summed and exact zeros dropped.
    pub fn from_taps(dim: usize, taps: impl IntoIterator<Item = (Offset, f64)>) -> Self {
        let mut v: Vec<(Offset, f64)> = taps.into_iter().collect();
        v.sort_by(|p, q| p.0.cmp(&q.0));
        let mut out: Vec<(Offset, f64)> = Vec::with_capacity(v.len());
        for (z, c) in v {
            debug_assert!(dim == 2 || z[1] == 0, "1D stencil with a y offset");
            match out.last_mut() {
                Some(last) if last.0 == z => last.1 += c,
                _ => out.push((z, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Stencil { dim, taps: out }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn taps(&self) -> &[(Offset, f64)] {
        &self.taps
    }
    pub fn len(&self) -> usize {
        self.taps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn tap(&self, z: Offset) -> f64 {
        self.taps.binary_search_by(|p| p.0.cmp(&z)).map(|i| self.taps[i].1).unwrap_or(0.0)
    }

    /// Largest max-norm of any offset carried.
    pub fn radius(&self) -> i32 {
        self.taps.iter().map(|(z, _)| z[0].abs().max(z[1].abs())).max().unwrap_or(0)
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|t| t.1).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.taps.iter().fold(0.0, |m, t| m.max(t.1.abs()))
    }

    fn bbox(&self) -> BBox {
        self.taps.iter().fold(BBox::empty(), |b, (z, _)| b.union(BBox { lo: *z, hi: *z }))
    }

    pub fn prune(&mut self, threshold: f64) {
        self.taps.retain(|t| t.1.abs() > threshold);
    }

    pub fn pruned(mut self, threshold: f64) -> Self {
        self.prune(threshold);
        self
    }

    pub fn scale(&self, f: f64) -> Self {
        if f == 0.0 {
            return Stencil::zero(self.dim);
        }
        Stencil { dim: self.dim, taps: self.taps.iter().map(|&(z, c)| (z, c * f)).collect() }
    }

    pub fn add_pruned(&self, o: &Stencil, threshold: f64) -> Self {
        self.lincomb(1.0, o, 1.0, threshold)
    }

    /// `fa * self + fb * o`, pruned.
    pub fn lincomb(&self, fa: f64, o: &Stencil, fb: f64, threshold: f64) -> Self {
        let mut out = Vec::with_capacity(self.taps.len() + o.taps.len());
        let (mut i, mut j) = (0, 0);
        while i < self.taps.len() || j < o.taps.len() {
            let take = match (self.taps.get(i), o.taps.get(j)) {
                (Some(p), Some(q)) => p.0.cmp(&q.0),
                (Some(_), None) => std::cmp::Ordering::Less,
                _ => std::cmp::Ordering::Greater,
            };
            match take {
                std::cmp::Ordering::Less => {
                    out.push((self.taps[i].0, fa * self.taps[i].1));
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push((o.taps[j].0, fb * o.taps[j].1));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((self.taps[i].0, fa * self.taps[i].1 + fb * o.taps[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.retain(|t| t.1 != 0.0 && t.1.abs() > threshold);
        Stencil { dim: self.dim.max(o.dim), taps: out }
    }

    pub fn mul_pruned(&self, o: &Stencil, threshold: f64) -> Self {
        let mut acc = DenseAcc::new(self.bbox().sum(o.bbox()));
        acc.add_product(self, o);
        acc.finish(self.dim.max(o.dim), threshold)
    }

    /// Fourier symbol `sum_z S[z] exp(i z . theta)`.
    pub fn symbol(&self, theta: [f64; 2]) -> Complex64 {
        self.taps
            .iter()
            .map(|&(z, c)| Complex64::from_polar(c, z[0] as f64 * theta[0] + z[1] as f64 * theta[1]))
            .sum()
    }

    pub fn max_abs_diff(&self, o: &Stencil) -> f64 {
        self.lincomb(1.0, o, -1.0, 0.0).max_abs()
    }

    /// CSV with columns `offset_x[,offset_y],coef`, lexicographic order, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if self.dim == 1 {
            s.push_str("offset_x,coef\n");
            for (z, c) in &self.taps {
                let _ = writeln!(s, "{},{}", z[0], c);
            }
        } else {
            s.push_str("offset_x,offset_y,coef\n");
            for (z, c) in &self.taps {
                let _ = writeln!(s, "{},{},{}", z[0], z[1], c);
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty stencil csv".into()))?;
        let dim = match header.trim() {
            "offset_x,coef" => 1,
            "offset_x,offset_y,coef" => 2,
            h => return Err(Error::Parse(format!("unexpected stencil header '{h}'"))),
        };
        let mut taps = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != dim + 1 {
                return Err(Error::Parse(format!("bad stencil row '{line}'")));
            }
            let p = |s: &str| s.parse::<i32>().map_err(|e| Error::Parse(format!("{e}: '{s}'")));
            let z = if dim == 1 { [p(f[0])?, 0] } else { [p(f[0])?, p(f[1])?] };
            let c = f[dim].parse::<f64>().map_err(|e| Error::Parse(format!("{e}: '{}'", f[dim])))?;
            taps.push((z, c));
        }
        Ok(Stencil::from_taps(dim, taps))
    }
}

impl std::ops::Add for &Stencil {
    type Output = Stencil;
    fn add(self, o: &Stencil) -> Stencil {
        self.add_pruned(o, DEFAULT_PRUNE)
    }
}

impl std::ops::Sub for &Stencil {
    type Output = Stencil;
    fn sub(self, o: &Stencil) -> Stencil {
        self.lincomb(1.0, o, -1.0, DEFAULT_PRUNE)
    }
}

impl std::ops::Mul for &Stencil {
    type Output = Stencil;
    fn mul(self, o: &Stencil) -> Stencil {
        self.mul_pruned(o, DEFAULT_PRUNE)
    }
}

/// Square matrix with stencil entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix {
    n: usize,
    dim: usize,
    e: Vec<Stencil>,
}

impl StencilMatrix {
    pub fn zeros(n: usize, dim: usize) -> Self {
        StencilMatrix { n, dim, e: vec![Stencil::zero(dim); n * n] }
    }

    pub fn identity(n: usize, dim: usize) -> Self {
        let mut m = Self::zeros(n, dim);
        for i in 0..n {
            m.e[i * n + i] = Stencil::identity(dim);
        }
        m
    }

    pub fn from_scalar(m: &DMatrix<f64>, dim: usize) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n, dim);
        for r in 0..n {
            for c in 0..n {
                if m[(r, c)] != 0.0 {
                    out.e[r * n + c] = Stencil::scalar(dim, m[(r, c)]);
                }
            }
        }
        out
    }

    pub fn diagonal(d: Vec<Stencil>) -> Self {
        let n = d.len();
        let dim = d.first().map_or(1, |s| s.dim());
        let mut m = Self::zeros(n, dim);
        for (i, s) in d.into_iter().enumerate() {
            m.e[i * n + i] = s;
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn get(&self, r: usize, c: usize) -> &Stencil {
        &self.e[r * self.n + c]
    }
    pub fn set(&mut self, r: usize, c: usize, s: Stencil) {
        self.e[r * self.n + c] = s;
    }
    pub fn row(&self, r: usize) -> Vec<Stencil> {
        self.e[r * self.n..(r + 1) * self.n].to_vec()
    }

    pub fn mul_pruned(&self, o: &StencilMatrix, threshold: f64) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n, self.dim);
        let lb: Vec<BBox> = self.e.iter().map(Stencil::bbox).collect();
        let rb: Vec<BBox> = o.e.iter().map(Stencil::bbox).collect();
        for r in 0..n {
            for c in 0..n {
                let bb = (0..n).fold(BBox::empty(), |b, k| b.union(lb[r * n + k].sum(rb[k * n + c])));
                if bb.is_empty() {
                    continue;
                }
                let mut acc = DenseAcc::new(bb);
                for k in 0..n {
                    acc.add_product(&self.e[r * n + k], &o.e[k * n + c]);
                }
                out.e[r * n + c] = acc.finish(self.dim, threshold);
            }
        }
        out
    }

    /// `left * self` for a real matrix `left`.
    pub fn left_mul_scalar(&self, left: &DMatrix<f64>, threshold: f64) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n, self.dim);
        for r in 0..n {
            for c in 0..n {
                let bb = (0..n)
                    .filter(|&k| left[(r, k)] != 0.0)
                    .fold(BBox::empty(), |b, k| b.union(self.e[k * n + c].bbox()));
                if bb.is_empty() {
                    continue;
                }
                let mut acc = DenseAcc::new(bb);
                for k in 0..n {
                    if left[(r, k)] != 0.0 {
                        acc.add_scaled(&self.e[k * n + c], left[(r, k)]);
                    }
                }
                out.e[r * n + c] = acc.finish(self.dim, threshold);
            }
        }
        out
    }

    /// `self * right` for a real matrix `right`.
    pub fn right_mul_scalar(&self, right: &DMatrix<f64>, threshold: f64) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n, self.dim);
        for r in 0..n {
            for c in 0..n {
                let bb = (0..n)
                    .filter(|&k| right[(k, c)] != 0.0)
                    .fold(BBox::empty(), |b, k| b.union(self.e[r * n + k].bbox()));
                if bb.is_empty() {
                    continue;
                }
                let mut acc = DenseAcc::new(bb);
                for k in 0..n {
                    if right[(k, c)] != 0.0 {
                        acc.add_scaled(&self.e[r * n + k], right[(k, c)]);
                    }
                }
                out.e[r * n + c] = acc.finish(self.dim, threshold);
            }
        }
        out
    }

    pub fn lincomb(&self, fa: f64, o: &StencilMatrix, fb: f64, threshold: f64) -> Self {
        StencilMatrix {
            n: self.n,
            dim: self.dim,
            e: self.e.iter().zip(&o.e).map(|(x, y)| x.lincomb(fa, y, fb, threshold)).collect(),
        }
    }

    /// Add stencil `s` to every diagonal entry.
    pub fn add_diagonal(&mut self, s: &Stencil, threshold: f64) {
        for i in 0..self.n {
            let k = i * self.n + i;
            self.e[k] = self.e[k].add_pruned(s, threshold);
        }
    }

    pub fn trace(&self, threshold: f64) -> Stencil {
        let bb = (0..self.n).fold(BBox::empty(), |b, i| b.union(self.e[i * self.n + i].bbox()));
        let mut acc = DenseAcc::new(bb);
        for i in 0..self.n {
            acc.add_scaled(&self.e[i * self.n + i], 1.0);
        }
        acc.finish(self.dim, threshold)
    }

    /// Every entry multiplied (convolved) by the same stencil.
    pub fn scale_stencil(&self, s: &Stencil, threshold: f64) -> Self {
        StencilMatrix { n: self.n, dim: self.dim, e: self.e.iter().map(|x| x.mul_pruned(s, threshold)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.e.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }

    pub fn max_abs_diff(&self, o: &StencilMatrix) -> f64 {
        self.e.iter().zip(&o.e).fold(0.0, |m, (x, y)| m.max(x.max_abs_diff(y)))
    }

    /// Complex matrix of Fourier symbols at wavenumber `theta`.
    pub fn symbol(&self, theta: [f64; 2]) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |r, c| self.e[r * self.n + c].symbol(theta))
    }
}

/// Row vector of stencils times a stencil matrix.
pub fn row_times(row: &[Stencil], m: &StencilMatrix, threshold: f64) -> Vec<Stencil> {
    let n = m.size();
    (0..n)
        .map(|c| {
            let bb = (0..n).fold(BBox::empty(), |b, k| b.union(row[k].bbox().sum(m.get(k, c).bbox())));
            let mut acc = DenseAcc::new(bb);
            for k in 0..n {
                acc.add_product(&row[k], m.get(k, c));
            }
            acc.finish(m.dim(), threshold)
        })
        .collect()
}

/// Characteristic polynomial `det(x I - A) = sum_k gamma[k] x^k` with stencil coefficients.
#[derive(Debug, Clone)]
pub struct CharPoly {
    pub gamma: Vec<Stencil>,
}

impl CharPoly {
    pub fn degree(&self) -> usize {
        self.gamma.len() - 1
    }

    /// Evaluate p(A); Cayley-Hamilton says this vanishes.
    pub fn eval_matrix(&self, a: &StencilMatrix, threshold: f64) -> StencilMatrix {
        // Horner
        let n = a.size();
        let mut acc = StencilMatrix::zeros(n, a.dim());
        for g in self.gamma.iter().rev() {
            acc = acc.mul_pruned(a, threshold);
            acc.add_diagonal(g, threshold);
        }
        acc
    }
}

/// Faddeev-LeVerrier recursion; valid over any commutative ring containing the rationals.
pub fn char_poly(a: &StencilMatrix, threshold: f64) -> CharPoly {
    let n = a.size();
    let dim = a.dim();
    let mut gamma = vec![Stencil::zero(dim); n + 1];
    gamma[n] = Stencil::identity(dim);
    let mut mk = StencilMatrix::zeros(n, dim);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I ; c_{n-k} = -tr(A M_k) / k
        let mut next = a.mul_pruned(&mk, threshold);
        next.add_diagonal(&gamma[n - k + 1], threshold);
        let am = a.mul_pruned(&next, threshold);
        gamma[n - k] = am.trace(threshold).scale(-1.0 / k as f64).pruned(threshold);
        mk = next;
    }
    CharPoly { gamma }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationCheck {
    /// Reject (a, b) outside a^2 <= b <= 1.
    Strict,
    /// Build the operator for any (a, b); used by stability scans.
    Unchecked,
}

/// Propagation weights (p0, p_{-1}, p_{+1}).
pub fn propagation_weights(a: f64, b: f64) -> (f64, f64, f64) {
    (1.0 - b, 0.5 * (a + b), 0.5 * (b - a))
}

pub fn check_ab(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Parameter(format!("a must lie in (0, 1], got {a}")));
    }
    // small slack so that b = a^2 computed in floating point is accepted
    if !(b >= a * a * (1.0 - 1e-12) && b <= 1.0 + 1e-12) {
        return Err(Error::Stability(format!("(a, b) = ({a}, {b}) violates a^2 <= b <= 1")));
    }
    Ok(())
}

/// Diagonal propagation operator with entries p0 T^0 + p_{-1} T^{-e_i} + p_{+1} T^{+e_i}.
pub fn build_tbar(lattice: &Lattice, a: f64, b: f64, check: PropagationCheck) -> Result<StencilMatrix> {
    if check == PropagationCheck::Strict {
        check_ab(a, b)?;
    }
    let (p0, pm, pp) = propagation_weights(a, b);
    let dim = lattice.dim();
    let d = lattice
        .directions()
        .iter()
        .map(|e| Stencil::from_taps(dim, [([0, 0], p0), ([-e[0], -e[1]], pm), ([e[0], e[1]], pp)]))
        .collect();
    Ok(StencilMatrix::diagonal(d))
}

/// W = M Tbar M^{-1}, A = W (I - S), B = W S.
pub fn build_w_a_b(
    transform: &TransformMatrix,
    s: &DMatrix<f64>,
    tbar: &StencilMatrix,
    threshold: f64,
) -> Result<(StencilMatrix, StencilMatrix, StencilMatrix)> {
    let q = transform.q();
    if s.nrows() != q || tbar.size() != q {
        return Err(Error::Dimension(format!(
            "transform q={q}, relaxation {}x{}, propagation {}",
            s.nrows(),
            s.ncols(),
            tbar.size()
        )));
    }
    let w = tbar
        .left_mul_scalar(transform.matrix(), threshold)
        .right_mul_scalar(transform.inverse(), threshold);
    let i_minus_s = DMatrix::<f64>::identity(q, q) - s;
    let a = w.right_mul_scalar(&i_minus_s, threshold);
    let b = w.right_mul_scalar(s, threshold);
    Ok((w, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st1(taps: &[(i32, f64)]) -> Stencil {
        Stencil::from_taps(1, taps.iter().map(|&(x, c)| ([x, 0], c)))
    }

    #[test]
    fn shift_algebra() {
        let t = Stencil::shift(1, [1, 0]);
        let tm = Stencil::shift(1, [-1, 0]);
        assert_eq!(&t * &tm, Stencil::identity(1));
        let s = st1(&[(-1, 1.0), (0, -2.0), (1, 1.0)]);
        let sq = &s * &s;
        assert_eq!(sq, st1(&[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)]));
        assert_eq!(sq.radius(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let s = Stencil::from_taps(2, [([1, -1], 0.1 + 0.2), ([-3, 2], -1e-300), ([0, 0], 1.0 / 3.0)]);
        let back = Stencil::from_csv(&s.to_csv()).unwrap();
        assert_eq!(s, back);
        let one = st1(&[(0, 0.1)]);
        assert_eq!(one.to_csv(), "offset_x,coef\n0,0.1\n");
    }

    #[test]
    fn tbar_rejects_bad_ab() {
        let lat = Lattice::d1q3(1.0, 0.5, 0.5).unwrap();
        assert!(build_tbar(&lat, 0.5, 0.2, PropagationCheck::Strict).is_err());
        assert!(build_tbar(&lat, 0.5, 0.2, PropagationCheck::Unchecked).is_ok());
        let t = build_tbar(&lat, 1.0, 1.0, PropagationCheck::Strict).unwrap();
        assert_eq!(t.get(1, 1), &Stencil::shift(1, [-1, 0]));
        assert_eq!(t.get(0, 0), &Stencil::identity(1));
    }

    #[test]
    fn char_poly_of_scalar_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = char_poly(&StencilMatrix::from_scalar(&m, 1), DEFAULT_PRUNE);
        assert!((p.gamma[0].tap([0, 0]) + 2.0).abs() < 1e-15);
        assert!((p.gamma[1].tap([0, 0]) + 5.0).abs() < 1e-15);
        assert_eq!(p.gamma[2], Stencil::identity(1));
    }
}
