use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("job kind mismatch: command is `{command}` but the config describes `{config}`")]
    KindMismatch { command: String, config: String },

    #[error(transparent)]
    Core(#[from] advst_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema { .. } | CliError::KindMismatch { .. } => "config",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Json(_) => "serialization",
            CliError::Pool(_) => "worker_pool",
        }
    }
}
