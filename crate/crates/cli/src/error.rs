use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Core { path: PathBuf, source: bifm::Error },
    #[error(transparent)]
    Numeric(bifm::Error),
    #[error("{failed} of {total} properties failed")]
    Verification { failed: usize, total: usize },
}

impl CliError {
    /// 0 ok, 1 usage or parse, 2 numeric failure, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 2,
            CliError::Verification { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn core_at(path: &Path, source: bifm::Error) -> Self {
        match source {
            bifm::Error::Io(e) => CliError::io(path, e),
            other => CliError::Core {
                path: path.to_path_buf(),
                source: other,
            },
        }
    }
}

impl From<bifm::Error> for CliError {
    fn from(e: bifm::Error) -> Self {
        match e {
            bifm::Error::Diverged { .. } | bifm::Error::NonFinite(_) => CliError::Numeric(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}
