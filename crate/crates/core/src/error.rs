use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("optimization failed at iteration {iteration}: {reason}")]
    OptimizationFailure { iteration: usize, reason: String },

    #[error("generation failed at diffusion step {step}: {reason}")]
    GenerationFailure { step: usize, reason: String },

    #[error("surrogate training did not converge: {0}")]
    TrainingFailure(String),

    #[error("translation provider failed for pivot `{pivot}`: {reason}")]
    Provider { pivot: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::Unsupported(_) => "unsupported",
            Error::OptimizationFailure { .. } => "optimization_failure",
            Error::GenerationFailure { .. } => "generation_failure",
            Error::TrainingFailure(_) => "training_failure",
            Error::Provider { .. } => "provider",
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
            Error::Serde(_) => "serialization",
            Error::Csv(_) => "csv",
        }
    }
}
