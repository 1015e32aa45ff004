use std::path::PathBuf;
use std::process::ExitCode;

use advst_cli::manifest::ErrorRecord;
use advst_cli::{run_command, JobKind};
use clap::Parser;

/// Targeted adversarial attacks on speech translation.
#[derive(Debug, Parser)]
#[command(name = "advst", version)]
struct Cli {
    /// Job to run; must match the config's job kind.
    job: JobKind,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.job, &cli.config, cli.seed, cli.out) {
        Ok(m) => {
            println!("{} ok: {} artifacts", m.job, m.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = ErrorRecord {
                kind: e.kind().into(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("error records serialize"));
            ExitCode::FAILURE
        }
    }
}
