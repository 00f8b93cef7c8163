use std::path::PathBuf;

use thiserror::Error;

/// Everything a command can fail with, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    /// Weights that do not fit the architecture or the run's element type.
    #[error("load error: {0}")]
    Load(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Core(#[from] edgeneck_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 0 success, 1 verification failure, 2 usage or configuration,
    /// 3 I/O or format.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Usage(_) | CliError::Config(_) | CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Format(_) | CliError::Load(_) => 3,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
