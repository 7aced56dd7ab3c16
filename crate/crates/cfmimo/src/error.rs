//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A linear system is singular at the configured pivot threshold.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// A normalization received an input it cannot scale (e.g. all zeros).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// A method's preconditions cannot be met for this configuration.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// NaN/Inf or another numerical failure at runtime.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Bad configuration file, CLI arguments, or experiment spec.
    #[error("config error: {0}")]
    Config(String),
    /// Checkpoint could not be written, parsed, or validated.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
