//! Batch experiment runner for the SKP-URA receiver.

pub mod bound_run;
pub mod config;
pub mod simulate;

use std::path::PathBuf;

use anyhow::{bail, Result};

pub const OUTPUT_ENV: &str = "SKP_URA_OUTPUT";
pub const WORKERS_ENV: &str = "SKP_URA_WORKERS";

/// Resolves the worker count and output path.
///
/// Workers: command line, then `SKP_URA_WORKERS`, then the config file.
/// `SKP_URA_OUTPUT` replaces the configured output path.
pub fn apply_overrides(
    exp: &mut config::ExperimentConfig,
    cli_workers: Option<usize>,
    env_workers: Option<&str>,
    env_output: Option<&str>,
) -> Result<()> {
    let env_workers = match env_workers {
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => bail!("{WORKERS_ENV}={s:?} is not a positive integer"),
        },
        None => None,
    };
    if cli_workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    if let Some(n) = cli_workers.or(env_workers) {
        exp.workers = n;
    }
    if let Some(p) = env_output.filter(|p| !p.is_empty()) {
        exp.output = PathBuf::from(p);
    }
    Ok(())
}
