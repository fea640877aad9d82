use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mdnet_core::cushion::{estimate_cushions, InterlayerDenominator};
use mdnet_core::perturb::{extreme_value_mc, perturbation_at_sigma, sigma_from_margins, PerturbReport};
use mdnet_core::train::evaluate;
use serde::Serialize;

use crate::args::{check_fits, load_checkpoint, DataArgs, OutArgs};
use crate::manifest::{seeds, OutputDir};
use crate::tables::{cell, DELTAS_HEADER};

#[derive(Debug, Clone, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,

    /// Noise scale; derived from the margins and cushions when omitted
    #[arg(long)]
    pub sigma: Option<f64>,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    /// Noise seed; trial t uses stream t
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also write per-trial deltas to perturb_deltas.csv
    #[arg(long)]
    pub dump_deltas: bool,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct PerturbFile<'a> {
    checkpoint: String,
    sigma_source: &'static str,
    train_accuracy: f64,
    report: &'a PerturbReport,
}

pub fn run_perturb(args: &PerturbArgs) -> Result<()> {
    let data = args.data.load(args.fraction, args.subset_seed)?;
    let (ck, digest) = load_checkpoint(&args.checkpoint)?;
    let net = &ck.network;
    check_fits(net, &data.train)?;
    let (accuracy, stats) = evaluate(net, &data.train)?;
    let (sigma, source) = match args.sigma {
        Some(s) => (s, "explicit"),
        None => {
            let cushions = estimate_cushions(net, &data.train, InterlayerDenominator::default())?;
            (sigma_from_margins(&stats, &cushions, net.depth())?, "formula")
        }
    };
    let report = perturbation_at_sigma(net, &data.train, &stats, sigma, args.trials, args.seed)?;

    let mut out = OutputDir::create(&args.out.out)?;
    if args.dump_deltas {
        let rows: Vec<Vec<String>> = report
            .deltas
            .iter()
            .map(|d| vec![d.trial.to_string(), cell(d.half_sigma), cell(d.sigma), cell(d.double_sigma)])
            .collect();
        out.write_csv("perturb_deltas.csv", &DELTAS_HEADER, &rows)?;
    }
    out.write_json(
        "perturb.json",
        &PerturbFile {
            checkpoint: args.checkpoint.display().to_string(),
            sigma_source: source,
            train_accuracy: accuracy,
            report: &report,
        },
    )?;
    println!(
        "sigma {:.4e} ({source}): median delta {:.4e}, threshold {:.4e}, below threshold {:.3}, slope ratio {}",
        report.sigma,
        report.median,
        report.threshold,
        report.fraction_below_threshold,
        report.slope_ratio.map_or("n/a".into(), |r| format!("{r:.3}"))
    );
    let mut inputs = data.inputs;
    inputs.push(digest);
    out.finish(
        "perturb",
        args,
        seeds([("seed", args.seed), ("subset_seed", args.subset_seed), ("data_seed", args.data.data_seed)]),
        inputs,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtremeArgs {
    /// Number of competing draws
    #[arg(long)]
    pub m: usize,

    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtremeFile {
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub frequency: f64,
    /// `1/(m+1)`
    pub expected: f64,
    /// Binomial standard error at `expected`.
    pub std_error: f64,
    pub within_three_sigma: bool,
}

pub fn run_extreme(args: &ExtremeArgs) -> Result<()> {
    let frequency = extreme_value_mc(args.m, args.trials, args.seed)?;
    let expected = 1.0 / (args.m as f64 + 1.0);
    let std_error = (expected * (1.0 - expected) / args.trials as f64).sqrt();
    let file = ExtremeFile {
        m: args.m,
        trials: args.trials,
        seed: args.seed,
        frequency,
        expected,
        std_error,
        within_three_sigma: (frequency - expected).abs() <= 3.0 * std_error,
    };
    println!("m = {}: frequency {frequency:.5}, expected {expected:.5} ± {:.5}", args.m, 3.0 * std_error);
    let mut out = OutputDir::create(&args.out.out)?;
    out.write_json("extreme.json", &file)?;
    out.finish("extreme", args, seeds([("seed", args.seed)]), vec![])?;
    Ok(())
}
