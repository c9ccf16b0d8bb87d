use std::path::Path;

use qpat::QpatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Io {
        stage: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: QpatError,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 numerical failure, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical { source, .. } => match source {
                QpatError::Config(_) => 1,
                _ => 2,
            },
            CliError::Verification(_) => 3,
        }
    }

    pub fn io(stage: impl Into<String>, path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            stage: format!("{} ({})", stage.into(), path.display()),
            source,
        }
    }

    pub fn numerical(stage: &'static str) -> impl FnOnce(QpatError) -> CliError {
        move |source| CliError::Numerical { stage, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
