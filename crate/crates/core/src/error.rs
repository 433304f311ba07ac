use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("stability constraint violated: {0}")]
    Stability(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("bootstrap required: {0}")]
    Bootstrap(String),
    #[error("divergence detected at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
