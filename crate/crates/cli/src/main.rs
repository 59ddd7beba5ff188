//! `elvc` — alignment, feature, training, and evaluation pipeline for
//! electrolaryngeal-to-natural speech conversion experiments.
//!
//! Every stage reads and writes files, so stages can be re-run or
//! replaced by external tools; with a fixed seed the whole pipeline is
//! byte-deterministic.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "elvc",
    about = "Electrolaryngeal speech alignment and conversion toolkit",
    version
)]
struct Cli {
    /// Flat key=value config file (e.g. stft.hop=160).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for training and gradient checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-utterance stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel / MCC / landmark features.
    Features(commands::features::FeaturesArgs),
    /// WSOLA time stretching.
    Stretch(commands::stretch::StretchArgs),
    /// Align an utterance pair and write the frame path.
    Align(commands::align::AlignArgs),
    /// Build the frame-paired training set for a corpus.
    Prepare(commands::prepare::PrepareArgs),
    /// Train a conversion model.
    Train(commands::train::TrainArgs),
    /// Apply a trained model to inputs.
    Convert(commands::convert::ConvertArgs),
    /// Report mel-cepstral distortion of converted vs target features.
    Eval(commands::eval::EvalArgs),
    /// Finite-difference verification of all analytic gradients.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Features(args) => commands::features::run(args, &cfg),
        Command::Stretch(args) => commands::stretch::run(args, &cfg),
        Command::Align(args) => commands::align::run(args, &cfg),
        Command::Prepare(args) => commands::prepare::run(args, &cfg, cli.jobs),
        Command::Train(args) => commands::train::run(args, &cfg, cli.seed),
        Command::Convert(args) => commands::convert::run(args, &cfg, cli.jobs),
        Command::Eval(args) => commands::eval::run(args, &cfg),
        Command::Gradcheck(args) => commands::gradcheck::run(args, cli.seed.unwrap_or(0)),
    }
}
