use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use skp_ura_harness::config::{BoundSweep, ExperimentConfig};
use skp_ura_harness::{apply_overrides, bound_run, simulate, OUTPUT_ENV, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "skp-ura", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("SKP_URA_GIT_DESCRIBE"), ")"))]
#[command(about = "Monte Carlo sweeps and achievability limits for SKP unsourced random access")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a PUPE sweep and write one CSV row per (Ka, Eb/N0) point.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides SKP_URA_WORKERS and the config file.
        #[arg(long)]
        workers: Option<usize>,
        /// Continue from the progress sidecar instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Required Eb/N0 of the achievability limit for each (M, Ka).
    Bound {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { config, workers, resume } => {
            let mut exp = ExperimentConfig::load(&config)?;
            let env_workers = std::env::var(WORKERS_ENV).ok();
            let env_output = std::env::var(OUTPUT_ENV).ok();
            apply_overrides(&mut exp, workers, env_workers.as_deref(), env_output.as_deref())?;
            let rows = simulate::run_experiment(&exp, resume)
                .with_context(|| format!("simulating {}", config.display()))?;
            eprintln!("wrote {} rows to {}", rows.len(), exp.output.display());
        }
        Cmd::Bound { config } => {
            let mut sweep = BoundSweep::load(&config)?;
            if let Some(p) = std::env::var(OUTPUT_ENV).ok().filter(|p| !p.is_empty()) {
                sweep.output = PathBuf::from(p);
            }
            let rows = bound_run::run_bound(&sweep)?;
            eprintln!("wrote {} rows to {}", rows.len(), sweep.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
