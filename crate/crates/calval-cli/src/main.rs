//! Command-line driver for the calibration, validation, and prediction
//! pipeline. Each subcommand runs one stage into the output directory;
//! `all` runs the whole sequence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Parser, Subcommand};

use calval::config::RunConfig;
use calval::pipeline::{BiasMode, Pipeline, Stage};

#[derive(Parser)]
#[command(
    name = "calval",
    version,
    about = "Calibration, validation, and model-averaged prediction for computer models"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/demo.toml")]
    config: PathBuf,

    /// Output directory holding the run's artifacts and manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Rebase every seed in the configuration onto this value, keeping
    /// the per-stage streams distinct.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Which discrepancy treatment to run: on, off, or both.
    #[arg(long, global = true, default_value = "both")]
    bias_mode: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic measurement campaign.
    Generate,
    /// Fit the Gaussian-process surrogate.
    Surrogate,
    /// Correct the calibration data and sample the parameter posterior.
    Iuq,
    /// Score validation-set Bayes factors against the prior ensemble.
    Validate,
    /// Predict the held-out set under every model.
    Predict,
    /// Render the summary tables.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stages(&self) -> Vec<Stage> {
        match self {
            Command::Generate => vec![Stage::Generate],
            Command::Surrogate => vec![Stage::Surrogate],
            Command::Iuq => vec![Stage::Iuq],
            Command::Validate => vec![Stage::Validate],
            Command::Predict => vec![Stage::Predict],
            Command::Report => vec![Stage::Report],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let bias_mode = BiasMode::from_str(&cli.bias_mode)?;
    let mut cfg = RunConfig::load(&cli.config)
        .with_context(|| format!("loading configuration {}", cli.config.display()))?;
    if let Some(base) = cli.seed_override {
        cfg.apply_seed_override(base);
        log::info!("seeds rebased onto {base}");
    }
    let mut pipeline = Pipeline::open(cfg, &cli.out, bias_mode)
        .with_context(|| format!("opening output directory {}", cli.out.display()))?;
    for stage in cli.command.stages() {
        pipeline
            .run(stage)
            .with_context(|| format!("stage {stage} failed"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
