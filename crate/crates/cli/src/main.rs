//! `mdnet`: train margin-distribution networks and compare generalization
//! bound terms from the command line.
//!
//! Every command writes into `--out` (or `$MDNET_OUT_DIR`) and seals the
//! directory with a `manifest.json`. Exit status is 0 on success, 1 on a
//! runtime error and 2 on a usage error.

mod args;
mod commands;
mod config;
mod manifest;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{bounds, grid, inspect, perturb, small_sample, train};

#[derive(Parser)]
#[command(name = "mdnet", version, about = "Margin-distribution training and generalization-bound experiments")]
struct Cli {
    /// key=value file of flag defaults; flags on the command line win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoint, history and manifest
    #[command(args_override_self = true)]
    Train(train::TrainArgs),
    /// Bound terms, cushions and margin statistics for checkpoints
    #[command(args_override_self = true)]
    Bounds(bounds::BoundsArgs),
    /// Accuracy over a (fraction, loss, seed) grid
    #[command(args_override_self = true)]
    SmallSample(small_sample::SmallSampleArgs),
    /// Output sensitivity to Frobenius-scaled weight noise
    #[command(args_override_self = true)]
    Perturb(perturb::PerturbArgs),
    /// Monte-Carlo tail frequency of a Gaussian against m others
    #[command(args_override_self = true)]
    Extreme(perturb::ExtremeArgs),
    /// Last hidden layer activations and their scatter decomposition
    #[command(args_override_self = true)]
    Embed(inspect::EmbedArgs),
    /// Per-sample margins and a margin histogram
    #[command(args_override_self = true)]
    Margins(inspect::MarginsArgs),
    /// Write the synthetic dataset as CSV
    #[command(args_override_self = true)]
    ExportSynth(inspect::ExportSynthArgs),
    /// Validation search over the mdnet band parameters
    #[command(args_override_self = true)]
    Grid(grid::GridArgs),
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Bounds(a) => bounds::run(a),
        Command::SmallSample(a) => small_sample::run(a),
        Command::Perturb(a) => perturb::run_perturb(a),
        Command::Extreme(a) => perturb::run_extreme(a),
        Command::Embed(a) => inspect::run_embed(a),
        Command::Margins(a) => inspect::run_margins(a),
        Command::ExportSynth(a) => inspect::run_export_synth(a),
        Command::Grid(a) => grid::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand_args(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
