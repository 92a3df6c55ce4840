//! Error type shared by the training, planning and data modules.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or dataset dimension did not match its counterpart.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numeric input was NaN or infinite where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A parameter violated its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An internal invariant failed; this signals a bug, not bad input.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// The exact eigen-probe was requested on an instance too large for it.
    #[error("instance too large for brute-force sigma: n_b = {n_b}, limit = {limit}")]
    BruteForceTooLarge { n_b: usize, limit: usize },

    /// Dataset ingestion failed.
    #[error("data error: {0}")]
    Data(String),

    /// CSV parsing failed.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// File I/O failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
