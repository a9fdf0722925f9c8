//! `iahvae` command-line entry point.
//!
//! Subcommands: `train`, `infer`, `bench`, `inverse` and `decompose`. Each run
//! writes its effective configuration to `<out>/config.lock`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
//! 1 any other I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iahvae::inference::InferenceError;
use iahvae::model::ModelError;
use iahvae::tensor::TensorError;
use iahvae::training::TrainError;
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Tensor(t) => t.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Config(_) => CliError::Config(e.to_string()),
            InferenceError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            InferenceError::Model(m) => m.into(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Io(io) => io.into(),
            TrainError::Config(_)
            | TrainError::Checksum(_)
            | TrainError::Version { .. }
            | TrainError::Format(_) => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "iahvae",
    version,
    about = "Hierarchical VAE with separable iterative refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `key=value` lines
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on synthetic data and write a checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Reconstruct images with amortized, iterative or hybrid inference
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// amortized | iterative | hybrid
        #[arg(long)]
        mode: Option<String>,
        /// Refinement steps per layer
        #[arg(long = "N", value_name = "N")]
        n: Option<usize>,
        /// Raw tensor file of one image or a stack of images
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Time subset against full-path refinement across model depths
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated depths
        #[arg(long)]
        depths: Option<String>,
        #[arg(long = "N", value_name = "N")]
        n: Option<usize>,
    },
    /// Deblurring or denoising with hybrid against amortized inference
    Inverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// deblur | denoise
        #[arg(long)]
        task: Option<String>,
        /// Side of the measured low-frequency block in pixels
        #[arg(long)]
        cutoff: Option<usize>,
        /// Noise standard deviation (normalized units)
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long = "N", value_name = "N")]
        n: Option<usize>,
    },
    /// Split an image into per-scale components
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn path_str(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Builds the effective configuration: defaults, file, `--set`, flags.
fn resolve(
    name: &str,
    common: &Common,
    flags: &[(&str, Option<String>)],
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new(name);
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for kv in &common.set {
        cfg.assign(kv)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        cfg.set("out", &path_str(out))?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = |v: &Option<usize>| v.map(|x| x.to_string());
    let p = |v: &Option<PathBuf>| v.as_deref().map(path_str);
    match &cli.command {
        Command::Train { common, epochs } => {
            let cfg = resolve("train", common, &[("train.epochs", s(epochs))])?;
            commands::train(&cfg)
        }
        Command::Infer {
            common,
            checkpoint,
            mode,
            n,
            input,
        } => {
            let cfg = resolve(
                "infer",
                common,
                &[
                    ("checkpoint", p(checkpoint)),
                    ("infer.mode", mode.clone()),
                    ("infer.N", s(n)),
                    ("infer.input", p(input)),
                ],
            )?;
            commands::infer(&cfg)
        }
        Command::Bench { common, depths, n } => {
            let cfg = resolve(
                "bench",
                common,
                &[("bench.depths", depths.clone()), ("bench.N", s(n))],
            )?;
            commands::bench(&cfg)
        }
        Command::Inverse {
            common,
            checkpoint,
            task,
            cutoff,
            sigma,
            n,
        } => {
            let cfg = resolve(
                "inverse",
                common,
                &[
                    ("checkpoint", p(checkpoint)),
                    ("inverse.task", task.clone()),
                    ("inverse.cutoff", s(cutoff)),
                    ("inverse.sigma", sigma.map(|x| x.to_string())),
                    ("inverse.N", s(n)),
                ],
            )?;
            commands::inverse(&cfg)
        }
        Command::Decompose { common, input } => {
            let cfg = resolve("decompose", common, &[("decompose.input", p(input))])?;
            commands::decompose(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iahvae: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
