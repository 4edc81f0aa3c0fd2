//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file header or layout.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file that uses a feature we do not read.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Value outside the domain of a function (e.g. a pixel outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user-supplied parameter.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Mismatched dimensions, channel counts or variant counts.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    Empty(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// Artifacts produced under different settings were combined.
    #[error("stale artifact: {0}")]
    StaleArtifact(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io_path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoPath {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 data, 3 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Json(_) => 1,
            Error::Solver(_) => 3,
            _ => 2,
        }
    }
}
