// Negated float guards like `!(x > 0.0)` are deliberate NaN rejections.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Experiment driver: simulate | verify | gxt | density | malliavin.
//!
//! Every command is a pure function of (config file, seed) to output bytes;
//! the defaults-resolved configuration is echoed next to the outputs.
//! Exit codes: 0 ok, 1 validation, 2 numerical failure, 3 invariant-suite
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;
mod report;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Suite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Suite(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "spdelab", version, about = "Stochastic heat equation laboratory")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path-parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one path and export trajectory files.
    Simulate,
    /// Run a named invariant suite: drift | kernels | noise | malliavin | convergence.
    Verify { suite: String },
    /// Tabulate g(x,t) and the lower-bound condition at the probe points.
    Gxt,
    /// Monte Carlo ensemble, KDE, small-ball and negative-moment diagnostics.
    Density,
    /// Per-path Malliavin norms at the probe points.
    Malliavin,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Ignore failure: the pool may already be initialized in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Command::Verify { suite } = &cli.command {
        let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out_dir)?;
        return commands::verify::run(suite, cli.seed.unwrap_or(2024), &out_dir);
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required for this command".into()))?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.display().to_string();
    }
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    echo_effective_config(&config, &out_dir)?;

    match &cli.command {
        Command::Simulate => commands::simulate::run(&config, &out_dir),
        Command::Gxt => commands::gxt::run(&config, &out_dir),
        Command::Density => commands::density::run(&config, &out_dir),
        Command::Malliavin => commands::malliavin::run(&config, &out_dir),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

fn echo_effective_config(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    std::fs::write(out_dir.join("effective_config.toml"), config.to_toml())?;
    Ok(())
}
