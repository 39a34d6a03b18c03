use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: the operation is undefined at v = 0")]
    ZeroVector,

    #[error("non-finite value encountered")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge within {iterations} iterations (near-degenerate spectrum?)")]
    NotConverged { what: String, iterations: usize },

    #[error("initialization produced the zero vector; resample the initial data points")]
    ZeroInit,

    #[error("numeric breakdown: {0}")]
    Numeric(String),

    #[error("end of stream")]
    EndOfStream,

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{0}")]
    Unsupported(String),

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("slope window is empty or has fewer than {needed} usable points (found {found})")]
    EmptyWindow { needed: usize, found: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
