use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {detail}")]
    Config { path: String, detail: String },
    #[error("{0}")]
    Core(#[from] ganselect::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{failed} of {total} sweep runs failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn config(path: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 0 success, 2 config error, 3 numeric divergence, 4 partial sweep
    /// failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(ganselect::Error::Config(_) | ganselect::Error::Ingest { .. }) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::PartialSweep { .. } => 4,
            _ => 1,
        }
    }
}
