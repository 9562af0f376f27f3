use thiserror::Error;

/// Errors produced by the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no convergence after {iterations} iterations ({detail})")]
    NonConvergence { iterations: usize, detail: String },

    #[error("dense oracle refused: dimension {dim} exceeds cap {cap}")]
    OracleCapExceeded { dim: usize, cap: usize },

    #[error("kernel evaluation failed at row {row}, column {col}: value {value}")]
    KernelEvaluation { row: usize, col: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
