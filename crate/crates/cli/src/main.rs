//! `factorpred`: simulate factor regression data, fit predictors, run
//! benchmark grids and summarize their results.

mod commands;
mod config;
mod io;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use crate::commands::Invocation;
use crate::config::{Command, RunConfig};

/// Environment variable that overrides `--jobs`.
const JOBS_ENV: &str = "FACTORPRED_JOBS";

#[derive(Debug, Parser)]
#[command(name = "factorpred", version, about = "Linear prediction under latent factor regression models")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; FACTORPRED_JOBS takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
}

fn jobs(cli: Option<usize>) -> Result<Option<usize>> {
    let jobs = match std::env::var(JOBS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(v.trim().parse::<usize>().with_context(|| format!("{JOBS_ENV}={v:?}"))?),
        _ => cli,
    };
    if jobs == Some(0) {
        bail!("the number of jobs must be at least 1");
    }
    Ok(jobs)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = jobs(cli.jobs)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting thread pool")?;
    }
    let config = RunConfig::load(&cli.config)?;
    let inv = Invocation::new(cli.command, config, cli.out, cli.seed)?;
    let files = inv.run()?;
    for f in files {
        println!("{}", inv.out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
