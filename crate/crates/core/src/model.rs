//! Model specification shared by the lattice Boltzmann solver and the derived schemes.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::{Lattice, RelaxationMatrix, TransformMatrix};
use crate::stencil::{check_ab, PropagationCheck, Stencil};

/// Everything a closure may need besides the fields themselves.
pub struct ClosureContext<'a> {
    pub lattice: &'a Lattice,
    pub grid: &'a Grid,
    pub dt: f64,
    pub b: f64,
    pub relaxation: &'a DMatrix<f64>,
}

/// Population-space linear closure: `eq_i^n = sum_h eq[h][i] phi^{n-h}`, same for the source.
#[derive(Debug, Clone)]
pub struct LinearClosure {
    pub eq: Vec<Vec<Stencil>>,
    pub src: Vec<Vec<Stencil>>,
}

/// Maps conserved moments to equilibrium data and sources in population space.
///
/// `eq` receives the equilibrium data the collision relaxes towards and `src` the source that
/// is added as `dt * src`; both are laid out direction-major (`i * n_sites + site`).
pub trait Closure: Send + Sync + Debug {
    fn n_conserved(&self) -> usize;

    /// Check that the leading transform rows produce the moments this closure interprets.
    fn check_transform(&self, lattice: &Lattice, transform: &TransformMatrix) -> Result<()>;

    fn evaluate(
        &self,
        ctx: &ClosureContext,
        current: &[Vec<f64>],
        previous: Option<&[Vec<f64>]>,
        eq: &mut [f64],
        src: &mut [f64],
    );

    /// Linear form in terms of the single conserved field, when one exists.
    fn linear_form(&self, _ctx: &ClosureContext) -> Option<LinearClosure> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub lattice: Lattice,
    pub transform: TransformMatrix,
    pub relaxation: RelaxationMatrix,
    pub b: f64,
    pub dt: f64,
    pub closure: Arc<dyn Closure>,
    /// Whether a^2 <= b <= 1 is enforced.
    pub propagation_check: PropagationCheck,
}

impl ModelSpec {
    pub fn new(
        lattice: Lattice,
        transform: TransformMatrix,
        relaxation: RelaxationMatrix,
        b: f64,
        dt: f64,
        closure: Arc<dyn Closure>,
    ) -> Result<Self> {
        Self::with_check(lattice, transform, relaxation, b, dt, closure, PropagationCheck::Strict)
    }

    /// Like [`ModelSpec::new`], optionally accepting (a, b) outside `a^2 <= b <= 1`
    /// (only `b` in (0, 1] and `a` in (0, 1] are then required).
    pub fn with_check(
        lattice: Lattice,
        transform: TransformMatrix,
        relaxation: RelaxationMatrix,
        b: f64,
        dt: f64,
        closure: Arc<dyn Closure>,
        propagation_check: PropagationCheck,
    ) -> Result<Self> {
        match propagation_check {
            PropagationCheck::Strict => check_ab(lattice.a(), b)?,
            PropagationCheck::Unchecked => {
                if !(b > 0.0 && b <= 1.0) {
                    return Err(Error::Parameter(format!("b must lie in (0, 1], got {b}")));
                }
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        if transform.q() != lattice.q() {
            return Err(Error::Dimension(format!("transform q={} vs lattice q={}", transform.q(), lattice.q())));
        }
        if closure.n_conserved() != transform.n_conserved() || relaxation.n_conserved() != transform.n_conserved() {
            return Err(Error::Dimension(format!(
                "conserved counts differ: closure {}, transform {}, relaxation {}",
                closure.n_conserved(),
                transform.n_conserved(),
                relaxation.n_conserved()
            )));
        }
        closure.check_transform(&lattice, &transform)?;
        Ok(ModelSpec { lattice, transform, relaxation, b, dt, closure, propagation_check })
    }

    pub fn a(&self) -> f64 {
        self.lattice.a()
    }
    pub fn q(&self) -> usize {
        self.lattice.q()
    }
    pub fn n_conserved(&self) -> usize {
        self.transform.n_conserved()
    }
    /// Grid spacing dx = lambda * dt.
    pub fn dx(&self) -> f64 {
        self.lattice.lambda() * self.dt
    }

    pub fn context<'a>(&'a self, grid: &'a Grid) -> ClosureContext<'a> {
        ClosureContext {
            lattice: &self.lattice,
            grid,
            dt: self.dt,
            b: self.b,
            relaxation: self.relaxation.matrix(),
        }
    }

    /// Same physics with another transform/relaxation pair.
    pub fn with_transform(&self, transform: TransformMatrix, relaxation: RelaxationMatrix) -> Result<Self> {
        Self::with_check(
            self.lattice.clone(),
            transform,
            relaxation,
            self.b,
            self.dt,
            self.closure.clone(),
            self.propagation_check,
        )
    }

    /// Short content hash of the numerical ingredients (M, S, a, b, dt, lattice).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.lattice.kind()).as_bytes());
        for v in [self.a(), self.b, self.dt, self.lattice.lambda(), self.lattice.cs2()] {
            h.update(v.to_le_bytes());
        }
        for v in self.transform.matrix().iter().chain(self.relaxation.matrix().iter()) {
            h.update(v.to_le_bytes());
        }
        h.update(format!("{:?}", self.closure).as_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
