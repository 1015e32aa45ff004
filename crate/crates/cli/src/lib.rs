//! Configuration-driven jobs for the `advst` command.

pub mod config;
pub mod error;
pub mod jobs;
pub mod manifest;

use std::path::{Path, PathBuf};

pub use config::{load_config, validate_config, Job, JobConfig, JobKind};
pub use error::{CliError, Result};
pub use jobs::execute_job;
pub use manifest::{Manifest, MANIFEST_FILE};

/// Load `config_path`, apply command-line overrides and run the job.
pub fn run_command(
    kind: JobKind,
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Manifest> {
    let mut cfg = load_config(config_path)?;
    if cfg.job.kind() != kind {
        return Err(CliError::KindMismatch {
            command: kind.to_string(),
            config: cfg.job.kind().to_string(),
        });
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    let dir = cfg.output_dir.clone().ok_or_else(|| CliError::Schema {
        path: "output_dir".into(),
        message: "no output directory (set `output_dir` or pass --out)".into(),
    })?;
    execute_job(&cfg, &dir)
}
