//! Velocity sets, moment transforms and relaxation matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Integer lattice offset. One-dimensional lattices keep the second slot at zero.
pub type Offset = [i32; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    D1Q3,
    D2Q9,
}

/// A DdQq velocity set with its weights and sound speed.
#[derive(Debug, Clone)]
pub struct Lattice {
    kind: LatticeKind,
    e: Vec<Offset>,
    w: Vec<f64>,
    opposite: Vec<usize>,
    lambda: f64,
    a: f64,
    c: f64,
    cs2: f64,
}

fn check_speed(lambda: f64, a: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter(format!("lattice speed lambda must be positive, got {lambda}")));
    }
    if !(a.is_finite() && a > 0.0 && a <= 1.0) {
        return Err(Error::Parameter(format!("a must lie in (0, 1], got {a}")));
    }
    Ok(())
}

fn opposites(e: &[Offset]) -> Vec<usize> {
    e.iter()
        .map(|v| e.iter().position(|u| u[0] == -v[0] && u[1] == -v[1]).expect("symmetric velocity set"))
        .collect()
}

impl Lattice {
    /// D1Q3 with velocity order (0, +1, -1) and rest weight `w0`.
    pub fn d1q3(lambda: f64, a: f64, w0: f64) -> Result<Self> {
        check_speed(lambda, a)?;
        if !(w0 > 0.0 && w0 < 1.0) {
            return Err(Error::Parameter(format!(
                "D1Q3 rest weight must lie in (0, 1) so that cs^2 > 0, got {w0}"
            )));
        }
        let e = vec![[0, 0], [1, 0], [-1, 0]];
        let side = 0.5 * (1.0 - w0);
        let c = a * lambda;
        Ok(Lattice {
            kind: LatticeKind::D1Q3,
            opposite: opposites(&e),
            e,
            w: vec![w0, side, side],
            lambda,
            a,
            c,
            cs2: (1.0 - w0) * c * c,
        })
    }

    /// D2Q9 in the usual order: rest, four axis links, four diagonals.
    pub fn d2q9(lambda: f64, a: f64) -> Result<Self> {
        check_speed(lambda, a)?;
        let e = vec![[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1], [1, 1], [-1, 1], [-1, -1], [1, -1]];
        let mut w = vec![4.0 / 9.0];
        w.extend([1.0 / 9.0; 4]);
        w.extend([1.0 / 36.0; 4]);
        let c = a * lambda;
        Ok(Lattice {
            kind: LatticeKind::D2Q9,
            opposite: opposites(&e),
            e,
            w,
            lambda,
            a,
            c,
            cs2: c * c / 3.0,
        })
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        match self.kind {
            LatticeKind::D1Q3 => 1,
            LatticeKind::D2Q9 => 2,
        }
    }
    pub fn q(&self) -> usize {
        self.e.len()
    }
    pub fn directions(&self) -> &[Offset] {
        &self.e
    }
    pub fn weights(&self) -> &[f64] {
        &self.w
    }
    pub fn opposite(&self, i: usize) -> usize {
        self.opposite[i]
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    /// Lattice velocity magnitude c = a * lambda.
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn cs2(&self) -> f64 {
        self.cs2
    }
    /// Physical velocity c * e_i.
    pub fn velocity(&self, i: usize) -> [f64; 2] {
        [self.c * self.e[i][0] as f64, self.c * self.e[i][1] as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformFlavor {
    Orthogonal,
    Natural,
    Custom,
}

/// Invertible moment transform with its first `n_conserved` rows producing conserved moments.
#[derive(Debug, Clone)]
pub struct TransformMatrix {
    m: DMatrix<f64>,
    inv: DMatrix<f64>,
    n_conserved: usize,
    flavor: TransformFlavor,
}

impl TransformMatrix {
    pub fn new(m: DMatrix<f64>, n_conserved: usize, flavor: TransformFlavor) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("transform must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        let q = m.nrows();
        if n_conserved == 0 || n_conserved >= q {
            return Err(Error::Parameter(format!("need 1 <= N < q conserved moments, got N={n_conserved}, q={q}")));
        }
        let inv = m
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("moment transform is not invertible".into()))?;
        let resid = (&m * &inv - DMatrix::<f64>::identity(q, q)).amax();
        if !resid.is_finite() || resid > 1e-8 {
            return Err(Error::Singular(format!("moment transform is numerically singular (residual {resid:.3e})")));
        }
        Ok(TransformMatrix { m, inv, n_conserved, flavor })
    }

    /// Orthogonal D1Q3 transform for velocity order (0, +1, -1).
    pub fn orthogonal_d1q3(c: f64) -> Result<Self> {
        let c2 = c * c;
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, c, -c, -2.0 * c2, c2, c2]);
        Self::new(m, 1, TransformFlavor::Orthogonal)
    }

    /// Raw (natural) D1Q3 moments 1, c_i, c_i^2.
    pub fn natural_d1q3(c: f64) -> Result<Self> {
        let c2 = c * c;
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, c, -c, 0.0, c2, c2]);
        Self::new(m, 1, TransformFlavor::Natural)
    }

    /// Orthogonal D2Q9 transform carrying the velocity scale c in every row.
    pub fn orthogonal_d2q9(c: f64, n_conserved: usize) -> Result<Self> {
        let (c2, c3, c4) = (c * c, c * c * c, c * c * c * c);
        #[rustfmt::skip]
        let rows = [
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
            0.0, c, 0.0, -c, 0.0, c, -c, -c, c,
            0.0, 0.0, c, 0.0, -c, c, c, -c, -c,
            -4.0 * c2, -c2, -c2, -c2, -c2, 2.0 * c2, 2.0 * c2, 2.0 * c2, 2.0 * c2,
            0.0, c2, -c2, c2, -c2, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, c2, -c2, c2, -c2,
            4.0 * c4, -2.0 * c4, -2.0 * c4, -2.0 * c4, -2.0 * c4, c4, c4, c4, c4,
            0.0, -2.0 * c3, 0.0, 2.0 * c3, 0.0, c3, -c3, -c3, c3,
            0.0, 0.0, -2.0 * c3, 0.0, 2.0 * c3, c3, c3, -c3, -c3,
        ];
        Self::new(DMatrix::from_row_slice(9, 9, &rows), n_conserved, TransformFlavor::Orthogonal)
    }

    /// Raw D2Q9 moments 1, cx, cy, cx^2+cy^2, cx^2-cy^2, cx cy, cx^2 cy, cx cy^2, cx^2 cy^2.
    pub fn natural_d2q9(lattice: &Lattice, n_conserved: usize) -> Result<Self> {
        let mut m = DMatrix::zeros(9, 9);
        for i in 0..9 {
            let [x, y] = lattice.velocity(i);
            let row = [1.0, x, y, x * x + y * y, x * x - y * y, x * y, x * x * y, x * y * y, x * x * y * y];
            for (r, v) in row.iter().enumerate() {
                m[(r, i)] = *v;
            }
        }
        Self::new(m, n_conserved, TransformFlavor::Natural)
    }

    /// Default transform for a lattice: orthogonal, N = 1 for D1Q3.
    pub fn orthogonal(lattice: &Lattice, n_conserved: usize) -> Result<Self> {
        match lattice.kind() {
            LatticeKind::D1Q3 => {
                if n_conserved != 1 {
                    return Err(Error::Parameter("D1Q3 transform supports a single conserved moment".into()));
                }
                Self::orthogonal_d1q3(lattice.c())
            }
            LatticeKind::D2Q9 => Self::orthogonal_d2q9(lattice.c(), n_conserved),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }
    pub fn q(&self) -> usize {
        self.m.nrows()
    }
    pub fn n_conserved(&self) -> usize {
        self.n_conserved
    }
    pub fn flavor(&self) -> TransformFlavor {
        self.flavor
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelaxationStructure {
    Diagonal,
    /// Non-conserved part partitioned into diagonal blocks (start, len).
    BlockLowerTriangular(Vec<(usize, usize)>),
}

/// Validated relaxation matrix S (block lower triangular, conserved block first).
#[derive(Debug, Clone)]
pub struct RelaxationMatrix {
    s: DMatrix<f64>,
    n_conserved: usize,
    structure: RelaxationStructure,
}

const ZERO_TOL: f64 = 1e-14;

fn minimal_blocks(s: &DMatrix<f64>, from: usize) -> Vec<(usize, usize)> {
    let q = s.nrows();
    let mut blocks = Vec::new();
    let mut start = from;
    while start < q {
        let mut end = start;
        let mut r = start;
        while r <= end {
            for l in (r + 1)..q {
                if s[(r, l)].abs() > ZERO_TOL {
                    end = end.max(l);
                }
            }
            r += 1;
        }
        blocks.push((start, end - start + 1));
        start = end + 1;
    }
    blocks
}

impl RelaxationMatrix {
    /// Validate S against a transform, inferring the finest admissible block partition.
    pub fn new(s: DMatrix<f64>, transform: &TransformMatrix) -> Result<Self> {
        Self::build(s, transform, None)
    }

    /// Validate S against a declared partition of the non-conserved rows into block sizes.
    pub fn with_blocks(s: DMatrix<f64>, transform: &TransformMatrix, block_sizes: &[usize]) -> Result<Self> {
        Self::build(s, transform, Some(block_sizes))
    }

    pub fn diagonal(values: &[f64], transform: &TransformMatrix) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)), transform)
    }

    fn build(s: DMatrix<f64>, transform: &TransformMatrix, declared: Option<&[usize]>) -> Result<Self> {
        let q = transform.q();
        let n = transform.n_conserved();
        if s.nrows() != q || s.ncols() != q {
            return Err(Error::Dimension(format!("relaxation must be {q}x{q}, got {}x{}", s.nrows(), s.ncols())));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("relaxation matrix contains non-finite entries".into()));
        }
        for i in 0..n {
            for l in (i + 1)..q {
                if s[(i, l)].abs() > ZERO_TOL {
                    return Err(Error::Structure(format!(
                        "conserved row {i} has a nonzero upper entry in column {l}"
                    )));
                }
            }
        }
        let blocks = match declared {
            None => minimal_blocks(&s, n),
            Some(sizes) => {
                if sizes.iter().sum::<usize>() != q - n || sizes.contains(&0) {
                    return Err(Error::Structure(format!(
                        "block sizes {sizes:?} do not partition the {} non-conserved rows",
                        q - n
                    )));
                }
                let mut out = Vec::new();
                let mut start = n;
                for &len in sizes {
                    out.push((start, len));
                    start += len;
                }
                for &(b0, len) in &out {
                    for r in b0..b0 + len {
                        for l in (b0 + len)..q {
                            if s[(r, l)].abs() > ZERO_TOL {
                                return Err(Error::Structure(format!(
                                    "entry ({r},{l}) lies above the declared block pattern"
                                )));
                            }
                        }
                    }
                }
                out
            }
        };
        for i in n..q {
            let d = s[(i, i)];
            if !(d > 0.0 && d < 2.0) {
                return Err(Error::Stability(format!("relaxation rate s[{i}] = {d} outside (0, 2)")));
            }
        }
        for &(b0, len) in &blocks {
            if len == 1 {
                continue;
            }
            let blk = s.view((b0, b0), (len, len)).clone_owned();
            for ev in blk.complex_eigenvalues().iter() {
                if ev.im.abs() > 1e-12 || !(ev.re > 0.0 && ev.re < 2.0) {
                    return Err(Error::Stability(format!(
                        "relaxation block at row {b0} has eigenvalue {ev} outside (0, 2)"
                    )));
                }
            }
        }
        let structure = if blocks.iter().all(|b| b.1 == 1) && is_lower_diag_free(&s) {
            RelaxationStructure::Diagonal
        } else {
            RelaxationStructure::BlockLowerTriangular(blocks)
        };
        Ok(RelaxationMatrix { s, n_conserved: n, structure })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }
    pub fn n_conserved(&self) -> usize {
        self.n_conserved
    }
    pub fn structure(&self) -> &RelaxationStructure {
        &self.structure
    }

    /// S with conserved diagonal set to one and conserved columns cleared below the diagonal.
    pub fn normalized(&self) -> DMatrix<f64> {
        let mut s = self.s.clone();
        let q = s.nrows();
        for l in 0..self.n_conserved {
            for i in 0..q {
                s[(i, l)] = if i == l { 1.0 } else { 0.0 };
            }
        }
        s
    }
}

fn is_lower_diag_free(s: &DMatrix<f64>) -> bool {
    let q = s.nrows();
    (0..q).all(|i| (0..i).all(|l| s[(i, l)].abs() <= ZERO_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d2q9_moment_identities() {
        let lat = Lattice::d2q9(3.125, 1.0).unwrap();
        let (mut w, mut cc) = (0.0, [[0.0; 2]; 2]);
        for i in 0..9 {
            let v = lat.velocity(i);
            w += lat.weights()[i];
            for a in 0..2 {
                for b in 0..2 {
                    cc[a][b] += lat.weights()[i] * v[a] * v[b];
                }
            }
        }
        assert!((w - 1.0).abs() < 1e-15);
        assert!((cc[0][0] - lat.cs2()).abs() < 1e-12 && (cc[1][1] - lat.cs2()).abs() < 1e-12);
        assert!(cc[0][1].abs() < 1e-15);
        assert!((lat.cs2() - 3.125f64.powi(2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn d1q3_weights_and_errors() {
        let lat = Lattice::d1q3(1.0, 0.6, 0.5).unwrap();
        assert!((lat.cs2() - 0.5 * 0.36).abs() < 1e-15);
        assert!(Lattice::d1q3(1.0, 0.6, 1.0).is_err());
        assert!(Lattice::d1q3(-1.0, 0.6, 0.5).is_err());
        assert_eq!(lat.opposite(1), 2);
    }

    #[test]
    fn orthogonal_d2q9_rows_are_orthogonal() {
        let t = TransformMatrix::orthogonal_d2q9(1.0, 3).unwrap();
        let m = t.matrix();
        let g = m * m.transpose();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert_eq!(g[(i, j)], 0.0, "rows {i},{j}");
                }
            }
        }
    }

    #[test]
    fn singular_transform_rejected() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0]);
        assert!(matches!(TransformMatrix::new(m, 1, TransformFlavor::Custom), Err(Error::Singular(_))));
    }

    #[test]
    fn relaxation_validation() {
        let t = TransformMatrix::orthogonal_d1q3(1.0).unwrap();
        assert!(RelaxationMatrix::diagonal(&[1.0, 1.2, 1.0], &t).is_ok());
        assert!(matches!(RelaxationMatrix::diagonal(&[1.0, 2.1, 1.0], &t), Err(Error::Stability(_))));
        let mut s = DMatrix::identity(3, 3);
        s[(0, 2)] = 0.3;
        assert!(matches!(RelaxationMatrix::new(s, &t), Err(Error::Structure(_))));

        let t9 = TransformMatrix::orthogonal_d2q9(1.0, 1).unwrap();
        let mut s = DMatrix::identity(9, 9);
        s[(1, 1)] = 1.5;
        s[(1, 2)] = -0.5;
        s[(2, 1)] = -0.5;
        s[(2, 2)] = 1.0;
        let r = RelaxationMatrix::new(s.clone(), &t9).unwrap();
        assert_eq!(
            r.structure(),
            &RelaxationStructure::BlockLowerTriangular(vec![(1, 2), (3, 1), (4, 1), (5, 1), (6, 1), (7, 1), (8, 1)])
        );
        assert!(matches!(
            RelaxationMatrix::with_blocks(s, &t9, &[1; 8]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn normalization_clears_conserved_columns() {
        let t = TransformMatrix::orthogonal_d2q9(1.0, 3).unwrap();
        let mut s = DMatrix::identity(9, 9) * 1.3;
        s[(1, 0)] = 0.2;
        s[(5, 2)] = 0.4;
        let r = RelaxationMatrix::new(s, &t).unwrap();
        let n = r.normalized();
        assert_eq!(n[(1, 0)], 0.0);
        assert_eq!(n[(5, 2)], 0.0);
        assert_eq!(n[(2, 2)], 1.0);
        assert_eq!(n[(5, 5)], 1.3);
    }
}
