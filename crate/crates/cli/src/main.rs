//! Command-line front end for the linkage-accuracy and coverage pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{load_config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "linkerr", version, about = "Coverage and linkage accuracy from link counts")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    scenario: Option<u8>,
    /// N = 100000 and R = 100 unless the config says otherwise.
    #[arg(long, global = true)]
    full_scale: bool,
    /// Input artifact for stage commands (defaults to the previous stage's
    /// output in the output directory).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate a population with its two samples.
    Simulate,
    /// Link a population dump with both rules and count links per record.
    Link,
    /// Fit the univariate neighbor model to a link-count dump.
    FitUni,
    /// Fit the log-linear multivariate neighbor model to a link-count dump.
    FitMulti,
    /// Naive, clerically corrected and conditional-independence estimates.
    Baselines,
    /// Run all replications and write the comparison tables.
    Experiment,
    /// Re-render the comparison tables from stored replications.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    cfg.apply(&Overrides { seed: cli.seed, scenario: cli.scenario, out: cli.out, full_scale: cli.full_scale });
    commands::dispatch(cli.command, &cfg, cli.input.as_deref())
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
