//! `sgp-hawkes`: simulate synthetic datasets, fit EM / mean-field / parametric
//! models, evaluate them on hold-out data and time the iterative fits.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 the fit did not converge
//! (artifacts are still written).

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Status;
use run_config::RunConfig;

/// Caps the worker pool.
const THREADS_ENV: &str = "HAWKES_SGP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sgp-hawkes", version, about = "Sigmoid Gaussian-process Hawkes process toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate training and hold-out sequences from a preset or rate tables.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Preset name, overriding the config.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Fit a model to the training split of a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset directory, overriding the config.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// em, vi or mle, overriding the config.
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate a fitted model on the hold-out split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Model file written by `fit`.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Wall time of a fixed number of iterations over several data sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<String>,
        /// Comma-separated event counts.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.fit.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<Status> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { common, preset } => {
            let mut config = load(&common)?;
            if preset.is_some() {
                config.preset = preset;
                config.custom = None;
            }
            commands::simulate(&config, &common.out)
        }
        Command::Fit { common, data, method } => {
            let mut config = load(&common)?;
            config.data = data.or(config.data);
            config.method = method.or(config.method);
            commands::fit(&config, &common.out)
        }
        Command::Eval { common, data, model } => {
            let mut config = load(&common)?;
            config.data = data.or(config.data);
            config.model = model.or(config.model);
            commands::eval(&config, &common.out)
        }
        Command::Bench { common, method, sizes } => {
            let mut config = load(&common)?;
            config.method = method.or(config.method);
            if let Some(sizes) = sizes {
                config.sizes = sizes;
            }
            commands::bench(&config, &common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: the fit did not converge; artifacts were written and flagged");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
