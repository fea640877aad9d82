use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use mdnet_core::bounds::{bound_report, BoundConfig, BoundReport, MarginPolicy, DEFAULT_DELTA};
use mdnet_core::cushion::{estimate_cushions, interlayer_smoothness, CushionProfile, InterlayerDenominator};
use mdnet_core::linalg::NormAxis;
use mdnet_core::train::evaluate;
use serde::Serialize;

use crate::args::{check_fits, load_checkpoint, parse_policy, DataArgs, OutArgs};
use crate::manifest::{seeds, OutputDir};
use crate::tables::{BoundRow, BOUNDS_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisArg {
    /// Grouped norms over columns
    Columns,
    /// Grouped norms over rows
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorArg {
    /// ‖φ(x^{i-1})‖
    PreviousActivation,
    /// ‖x^i‖
    LayerOutput,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    /// Checkpoint file; repeat for several
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,

    #[command(flatten)]
    pub data: DataArgs,

    /// Stratified fraction of the training split the checkpoints were trained on
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    /// Seed that drew the training subset (the training seed)
    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,

    /// Reference margin for the prior bounds: `min` or a percentile such as `p5`
    #[arg(long, value_parser = parse_policy, default_value = "p5")]
    pub gamma: MarginPolicy,

    /// Failure probability of the generalization gap
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,

    #[arg(long, value_enum, default_value_t = AxisArg::Columns)]
    pub norm_axis: AxisArg,

    /// Norm paired with the Jacobian in the interlayer cushion
    #[arg(long, value_enum, default_value_t = DenominatorArg::PreviousActivation)]
    pub denominator: DenominatorArg,

    /// Noise draws per sample for the smoothness estimate; 0 skips it
    #[arg(long, default_value_t = 0)]
    pub smoothness_trials: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub smoothness_sigma: f64,

    #[arg(long, default_value_t = 0)]
    pub smoothness_seed: u64,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct Entry {
    checkpoint: String,
    epoch: Option<usize>,
    report: BoundReport,
    cushions: CushionProfile,
}

#[derive(Serialize)]
struct BoundsFile {
    gamma_policy: MarginPolicy,
    rows: Vec<BoundRow>,
    reports: Vec<Entry>,
}

pub fn run(args: &BoundsArgs) -> Result<()> {
    let data = args.data.load(args.fraction, args.subset_seed)?;
    let train = &data.train;
    let cfg = BoundConfig {
        policy: args.gamma,
        delta: args.delta,
        axis: match args.norm_axis {
            AxisArg::Columns => NormAxis::Columns,
            AxisArg::Rows => NormAxis::Rows,
        },
    };
    let denominator = match args.denominator {
        DenominatorArg::PreviousActivation => InterlayerDenominator::PreviousActivation,
        DenominatorArg::LayerOutput => InterlayerDenominator::LayerOutput,
    };

    let mut inputs = data.inputs.clone();
    let mut entries = Vec::new();
    for path in &args.checkpoints {
        let (ck, digest) = load_checkpoint(path)?;
        inputs.push(digest);
        let net = &ck.network;
        check_fits(net, train)?;
        let (accuracy, stats) = evaluate(net, train)?;
        let mut cushions = estimate_cushions(net, train, denominator)?;
        if args.smoothness_trials > 0 {
            cushions.smoothness = Some(interlayer_smoothness(
                net,
                train,
                args.smoothness_sigma,
                args.smoothness_trials,
                args.smoothness_seed,
            )?);
        }
        let report = bound_report(net, train, &stats, &cushions, &cfg)?;
        if !report.mdnet_valid {
            log::warn!(
                "{}: lambda = {} (>= 1 or degenerate cushions), margin-ratio terms flagged invalid",
                path.display(),
                stats.ratio_lambda
            );
        }
        let row = BoundRow::new(path.display().to_string(), ck.epoch, &report, accuracy, cushions.resilience_sum());
        entries.push((row, Entry {
            checkpoint: path.display().to_string(),
            epoch: ck.epoch,
            report,
            cushions,
        }));
    }
    // stable: unnumbered checkpoints keep their order after the numbered ones
    entries.sort_by_key(|(row, _)| row.epoch.unwrap_or(usize::MAX));

    let (rows, reports): (Vec<BoundRow>, Vec<Entry>) = entries.into_iter().unzip();
    let mut out = OutputDir::create(&args.out.out)?;
    let cells: Vec<Vec<String>> = rows.iter().map(BoundRow::cells).collect();
    out.write_csv("bounds.csv", &BOUNDS_HEADER, &cells)?;
    for row in &rows {
        println!(
            "{} (epoch {}): frobenius {:.4e}, spec_fro {:.4e}, mdnet_ratio {:.4e}, lambda {:.4}",
            row.checkpoint,
            row.epoch.map_or("-".into(), |e| e.to_string()),
            row.frobenius,
            row.spec_fro,
            row.mdnet_ratio,
            row.lambda
        );
    }
    out.write_json(
        "bounds.json",
        &BoundsFile {
            gamma_policy: args.gamma,
            rows,
            reports,
        },
    )?;
    out.finish(
        "bounds",
        args,
        seeds([
            ("data_seed", args.data.data_seed),
            ("subset_seed", args.subset_seed),
            ("smoothness_seed", args.smoothness_seed),
        ]),
        inputs,
    )?;
    Ok(())
}
