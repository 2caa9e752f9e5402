//! Subcommands. Each returns an [`Outcome`] and writes a run manifest.

mod campaign;
mod estimate;
mod genbtv;
mod tools;
mod train;

use std::path::PathBuf;

use btv_core::inject::InjectionKind;
use clap::{Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};
use crate::session::{Context, Outcome};

pub use campaign::{campaign, CampaignReport, ExperimentReport, SubjectReport, TargetReport};
pub use estimate::{estimate, EstimateRow};
pub use genbtv::genbtv;
pub use tools::{inject, presample, print_config, quantize};
pub use train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfigKind {
    /// Training config of the reference MLP.
    TrainMlp,
    /// Training config of the reference CNN.
    TrainCnn,
    /// Test-vector generation defaults.
    Genbtv,
    /// A file-based campaign template.
    Campaign,
    /// The desk-scale reproduction campaign.
    Reproduce,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train a model and write it with its train/test datasets.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Quantize a float model to int8.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        /// Report accuracy before and after quantization on this dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Optimize and calibrate a Bayesian test vector for a model.
    Genbtv {
        #[arg(long)]
        model: PathBuf,
        /// Generator config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Single-shot uncertainty check. Exit 0 = certain, 10 = uncertain.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// Test vector (`.btv`) or pre-drawn sample (`.btvs`).
        #[arg(long)]
        btv: PathBuf,
        /// Samples per estimate; defaults to the sample-count policy.
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Draw one sample of a test vector and calibrate its own threshold.
    Presample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        btv: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        offset: f64,
    },
    /// Write a perturbed copy of a model.
    Inject {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: InjectionKind,
        /// Flip probability or noise scale.
        #[arg(long)]
        magnitude: f64,
        #[arg(long, default_value_t = 1.0)]
        layer_fraction: f64,
    },
    /// Run the Monte-Carlo campaigns of a config file.
    Campaign {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a fully specified default config.
    PrintConfig {
        #[arg(value_enum)]
        kind: ConfigKind,
    },
}

fn parse_kind(s: &str) -> Result<InjectionKind, String> {
    s.parse().map_err(|e: btv_core::Error| e.to_string())
}

fn dispatch(ctx: &Context, cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::Train { config } => train(ctx, config),
        Command::Quantize { model, dataset } => quantize(ctx, model, dataset.as_deref()),
        Command::Genbtv { model, config } => genbtv(ctx, model, config.as_deref()),
        Command::Estimate { model, btv, n_samples } => estimate(ctx, model, btv, *n_samples).map(|(o, _)| o),
        Command::Presample { model, btv, offset } => presample(ctx, model, btv, *offset),
        Command::Inject {
            model,
            kind,
            magnitude,
            layer_fraction,
        } => inject(ctx, model, *kind, *magnitude, *layer_fraction),
        Command::Campaign { config } => campaign(ctx, config).map(|(o, _)| o),
        Command::PrintConfig { kind } => print_config(ctx, *kind),
    }
}

/// Runs `f` on a thread pool sized by `--threads` (the global pool otherwise).
pub fn with_threads<T: Send>(ctx: &Context, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match ctx.threads {
        None => Ok(f()),
        Some(0) => Err(CliError::config("--threads must be ≥ 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Executes a subcommand inside the configured thread pool.
pub fn execute(ctx: &Context, cmd: &Command) -> CliResult<Outcome> {
    with_threads(ctx, || dispatch(ctx, cmd))?
}
