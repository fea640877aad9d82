use anyhow::{bail, Result};
use clap::Args;
use mdnet_core::data::subset_fraction;
use mdnet_core::margin::LossKind;
use mdnet_core::train::{evaluate, train};
use serde::Serialize;

use crate::args::{parse_loss, DataArgs, ModelArgs, OutArgs};
use crate::manifest::OutputDir;
use crate::tables::{cell, SMALL_SAMPLE_HEADER, SMALL_SAMPLE_TREND_HEADER};

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmallSampleArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Training fractions, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub fractions: Vec<f64>,

    /// Losses, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_loss, required = true)]
    pub losses: Vec<LossKind>,

    /// Seeds, comma separated; each drives the subset, init and shuffling
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub fraction: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub train_size: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub margin_mean: f64,
    #[serde(with = "mdnet_core::report::float")]
    pub margin_ratio: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trend {
    pub fraction: f64,
    pub loss: LossKind,
    pub seeds: usize,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
}

/// mdnet against hinge at one (fraction, seed).
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub fraction: f64,
    pub seed: u64,
    pub mdnet: f64,
    pub hinge: f64,
    pub mdnet_at_least_hinge: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub comparisons: Vec<Comparison>,
    pub mdnet_wins: usize,
    pub total: usize,
    /// Fractions where the seed-mean of mdnet is at least that of hinge.
    pub fraction_mean_wins: Vec<f64>,
}

#[derive(Serialize)]
struct SmallSampleFile<'a> {
    cells: &'a [Cell],
    trend: &'a [Trend],
    mdnet_vs_hinge: Option<ComparisonSummary>,
}

pub fn trend(cells: &[Cell], fractions: &[f64], losses: &[LossKind]) -> Vec<Trend> {
    let mut out = Vec::new();
    for &fraction in fractions {
        for &loss in losses {
            let acc: Vec<f64> = cells
                .iter()
                .filter(|c| c.fraction == fraction && c.loss == loss)
                .map(|c| c.test_accuracy)
                .collect();
            let n = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / n;
            let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            out.push(Trend {
                fraction,
                loss,
                seeds: acc.len(),
                mean_test_accuracy: mean,
                std_test_accuracy: var.sqrt(),
            });
        }
    }
    out
}

pub fn compare(cells: &[Cell], trend: &[Trend]) -> Option<ComparisonSummary> {
    let find = |f: f64, s: u64, l: LossKind| cells.iter().find(|c| c.fraction == f && c.seed == s && c.loss == l);
    let comparisons: Vec<Comparison> = cells
        .iter()
        .filter(|c| c.loss == LossKind::Mdnet)
        .filter_map(|m| {
            let h = find(m.fraction, m.seed, LossKind::Hinge)?;
            Some(Comparison {
                fraction: m.fraction,
                seed: m.seed,
                mdnet: m.test_accuracy,
                hinge: h.test_accuracy,
                mdnet_at_least_hinge: m.test_accuracy >= h.test_accuracy,
            })
        })
        .collect();
    if comparisons.is_empty() {
        return None;
    }
    let mean = |f: f64, l: LossKind| trend.iter().find(|t| t.fraction == f && t.loss == l).map(|t| t.mean_test_accuracy);
    let mut fraction_mean_wins = Vec::new();
    for t in trend.iter().filter(|t| t.loss == LossKind::Mdnet) {
        if let Some(h) = mean(t.fraction, LossKind::Hinge) {
            if t.mean_test_accuracy >= h {
                fraction_mean_wins.push(t.fraction);
            }
        }
    }
    Some(ComparisonSummary {
        mdnet_wins: comparisons.iter().filter(|c| c.mdnet_at_least_hinge).count(),
        total: comparisons.len(),
        comparisons,
        fraction_mean_wins,
    })
}

pub fn run(args: &SmallSampleArgs) -> Result<()> {
    if args.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        bail!("fractions must lie in (0, 1]");
    }
    let data = args.data.load(1.0, 0)?;
    if data.test.is_empty() {
        bail!("small-sample runs need a non-empty test split");
    }
    let mut cells = Vec::new();
    for &fraction in &args.fractions {
        for &loss in &args.losses {
            for &seed in &args.seeds {
                let subset = if fraction == 1.0 {
                    data.train.clone()
                } else {
                    subset_fraction(&data.train, fraction, seed, true)?
                };
                let mut cfg = args.model.train_config(loss, &subset, seed);
                // only the final record is reported; telemetry never changes the weights
                cfg.telemetry_every = cfg.epochs;
                let (net, history) = train(&cfg, &subset, &data.test)?;
                let last = history.last().expect("training records the last epoch");
                let (test_accuracy, _) = evaluate(&net, &data.test)?;
                log::info!("fraction {fraction}, {loss}, seed {seed}: test accuracy {test_accuracy:.4}");
                cells.push(Cell {
                    fraction,
                    loss,
                    seed,
                    train_size: subset.len(),
                    train_accuracy: last.train_accuracy,
                    test_accuracy,
                    margin_mean: last.margins.mean_r,
                    margin_ratio: last.margins.ratio_lambda,
                    epochs: cfg.epochs,
                });
            }
        }
    }
    let trend = trend(&cells, &args.fractions, &args.losses);
    let summary = compare(&cells, &trend);

    let mut out = OutputDir::create(&args.out.out)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                cell(c.fraction),
                c.loss.to_string(),
                c.seed.to_string(),
                c.train_size.to_string(),
                cell(c.train_accuracy),
                cell(c.test_accuracy),
                cell(c.margin_mean),
                cell(c.margin_ratio),
                c.epochs.to_string(),
            ]
        })
        .collect();
    out.write_csv("small_sample.csv", &SMALL_SAMPLE_HEADER, &rows)?;
    let trend_rows: Vec<Vec<String>> = trend
        .iter()
        .map(|t| {
            vec![
                cell(t.fraction),
                t.loss.to_string(),
                t.seeds.to_string(),
                cell(t.mean_test_accuracy),
                cell(t.std_test_accuracy),
            ]
        })
        .collect();
    out.write_csv("small_sample_trend.csv", &SMALL_SAMPLE_TREND_HEADER, &trend_rows)?;
    for t in &trend {
        println!(
            "fraction {:>6}  {:<13}  mean test accuracy {:.4} ± {:.4} over {} seeds",
            t.fraction, t.loss.name(), t.mean_test_accuracy, t.std_test_accuracy, t.seeds
        );
    }
    if let Some(s) = &summary {
        println!("mdnet >= hinge in {}/{} (fraction, seed) comparisons", s.mdnet_wins, s.total);
    }
    out.write_json(
        "small_sample.json",
        &SmallSampleFile {
            cells: &cells,
            trend: &trend,
            mdnet_vs_hinge: summary,
        },
    )?;
    let mut seeds: std::collections::BTreeMap<String, u64> =
        args.seeds.iter().enumerate().map(|(i, s)| (format!("seed_{i}"), *s)).collect();
    seeds.insert("data_seed".into(), args.data.data_seed);
    out.finish("small-sample", args, seeds, data.inputs)?;
    Ok(())
}
