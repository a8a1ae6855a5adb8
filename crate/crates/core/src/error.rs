use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node id {id} out of range for a graph with {n} nodes")]
    NodeRange { id: usize, n: usize },

    #[error("{path}:{line}: node id {id} out of range for a graph with {n} nodes")]
    EdgeRange {
        path: PathBuf,
        line: usize,
        id: usize,
        n: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate alignment prior: {0}")]
    DegeneratePrior(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("gradient check failed: max relative deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    Gradient { deviation: f64, tolerance: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance too large: {0}")]
    TooLarge(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
