//! Generalized-propagation multiple-relaxation-time lattice Boltzmann models and the
//! multi-level finite-difference schemes they are equivalent to.

pub mod error;
pub mod fourth_order;
pub mod grid;
pub mod io;
pub mod lattice;
pub mod model;
pub mod models;
pub mod scheme;
pub mod solver;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{Grid, Walls};
pub use lattice::{Lattice, LatticeKind, RelaxationMatrix, TransformMatrix};
pub use model::{Closure, ModelSpec};
pub use scheme::{derive_scheme, DeriveOptions, DerivationPath, GpmfdSystem, MultiLevelScheme};
pub use solver::LbSolver;
pub use stencil::{Stencil, StencilMatrix};
