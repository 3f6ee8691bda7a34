use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or sizes that do not fit together.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A value left the finite range while computing a tape node.
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { node: usize, op: &'static str },

    /// The caller violated a precondition (bad argument, wrong order of calls).
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Samples whose moments cannot be used (singular covariance and similar).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, iteration {iteration}: {source}")]
    Divergence {
        epoch: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: row {row}: {detail}")]
    Ingest { path: PathBuf, row: usize, detail: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// True for errors caused by numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}
