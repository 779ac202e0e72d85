//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments to an operation (empty sample sets, invalid parameters).
    #[error("usage error: {0}")]
    Usage(String),
    /// A query point, radius or slice falls outside the grid.
    #[error("range error: {0}")]
    Range(String),
    /// Configuration problems, all collected before reporting.
    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    /// Newton iteration failed to converge while marching.
    #[error("Newton iteration diverged at time step {step} (residual {residual:.3e})")]
    NewtonDiverged { step: usize, residual: f64 },
    /// Projected relaxation exhausted its sweep budget.
    #[error("relaxation sweeps exceeded at time step {step} (worst residual {residual:.3e})")]
    SweepsExceeded { step: usize, residual: f64 },
    /// Least-squares system could not be solved.
    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),
    #[error("unknown reference solution id: {0}")]
    UnknownReference(String),
    #[error("field format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
}
