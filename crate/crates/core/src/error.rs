use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node index {index} out of range for a graph with {num_nodes} nodes (line {line})")]
    NodeOutOfRange {
        index: usize,
        num_nodes: usize,
        line: usize,
    },

    #[error("self-loop on node {node} (line {line})")]
    SelfLoop { node: usize, line: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense operator of size {size} exceeds the cap of {cap}")]
    DenseCapExceeded { size: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NonConvergence {
        iterations: usize,
        last_estimate: f64,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("backward already run on this tape")]
    TapeConsumed,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::NonFiniteLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
