//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by trajectory ingestion, assembly, and decomposition.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A data file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data file exists but its contents are malformed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A floating-point evaluation left the representable range.
    #[error("numeric range: {0}")]
    NumericRange(String),

    /// Simulated dynamics produced a non-finite state.
    #[error("trajectory diverged at t = {time}")]
    Divergence { time: f64 },

    /// The regularized Gram matrix could not be factorized.
    #[error("singular Gram matrix: {0}; increase eps or use fewer/longer trajectories")]
    SingularGram(String),

    /// An eigenvector is numerically orthogonal to the data span.
    #[error("degenerate eigenvector: {0}")]
    DegenerateEigenvector(String),

    /// The eigenbasis cannot carry the full state observable.
    #[error("degenerate eigenbasis: {0}")]
    DegenerateEigenbasis(String),

    /// A stored model no longer matches the trajectory data on disk.
    #[error("stale model: {0}")]
    StaleModel(String),

    /// Unexpected failure inside the linear-algebra backend.
    #[error("linear algebra backend: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, Error>;
