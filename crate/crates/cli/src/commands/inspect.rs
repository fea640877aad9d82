use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use mdnet_core::margin::{margin_records, margin_stats, variance_decomposition, MarginSummary};
use mdnet_core::net::forward;
use mdnet_core::report::float;
use serde::Serialize;

use crate::args::{check_fits, feature_cells, load_checkpoint, DataArgs, DataSource, OutArgs, Split};
use crate::manifest::{seeds, OutputDir};
use crate::tables::{cell, feature_header, HISTOGRAM_HEADER, MARGINS_HEADER};

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,

    /// Which split to read
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub probe: ProbeArgs,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedSummary {
    pub samples: usize,
    pub dim: usize,
    pub s_a: f64,
    pub s_e: f64,
    #[serde(with = "float")]
    pub ratio: f64,
    #[serde(with = "float")]
    pub lambda: f64,
    #[serde(with = "float")]
    pub inv_lambda: f64,
}

pub fn run_embed(args: &EmbedArgs) -> Result<()> {
    let p = &args.probe;
    let data = p.data.load(p.fraction, p.subset_seed)?;
    let set = data.split(p.split);
    let (ck, digest) = load_checkpoint(&p.checkpoint)?;
    let net = &ck.network;
    check_fits(net, set)?;
    let d = net.depth();
    if d < 2 {
        bail!("embedding needs at least one hidden layer");
    }
    let embeddings = set
        .features()
        .iter()
        .map(|x| Ok(forward(net, x)?.phi(d - 1).clone()))
        .collect::<Result<Vec<_>>>()?;
    let scatter = variance_decomposition(&embeddings, set.labels())?;
    let lambda = margin_stats(net, set)?.ratio_lambda;
    let dim = net.layer(d - 1).rows();

    let rows: Vec<Vec<String>> = embeddings
        .iter()
        .zip(set.labels())
        .enumerate()
        .map(|(i, (z, y))| {
            let mut row = vec![i.to_string(), y.to_string()];
            row.extend(z.as_slice().iter().map(|v| cell(*v)));
            row
        })
        .collect();
    let mut out = OutputDir::create(&args.out.out)?;
    out.write_csv("embeddings.csv", &feature_header(&["sample_id", "label"], "e", dim), &rows)?;
    let summary = EmbedSummary {
        samples: set.len(),
        dim,
        s_a: scatter.s_a,
        s_e: scatter.s_e,
        ratio: scatter.ratio,
        lambda,
        inv_lambda: 1.0 / lambda,
    };
    println!(
        "S_A {:.6e}, S_E {:.6e}, ratio {:.4}, 1/lambda {:.4}",
        summary.s_a, summary.s_e, summary.ratio, summary.inv_lambda
    );
    out.write_json("embed_summary.json", &summary)?;
    let mut inputs = data.inputs;
    inputs.push(digest);
    out.finish(
        "embed",
        args,
        seeds([("subset_seed", p.subset_seed), ("data_seed", p.data.data_seed)]),
        inputs,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MarginsArgs {
    #[command(flatten)]
    pub probe: ProbeArgs,

    /// Histogram bins
    #[arg(long, default_value_t = 40)]
    pub bins: usize,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct MarginsFile {
    samples: usize,
    accuracy: f64,
    summary: MarginSummary,
    min: f64,
    max: f64,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn run_margins(args: &MarginsArgs) -> Result<()> {
    if args.bins == 0 {
        bail!("--bins must be at least 1");
    }
    let p = &args.probe;
    let data = p.data.load(p.fraction, p.subset_seed)?;
    let set = data.split(p.split);
    let (ck, digest) = load_checkpoint(&p.checkpoint)?;
    check_fits(&ck.network, set)?;
    let records = margin_records(&ck.network, set)?;
    let margins: Vec<f64> = records.iter().map(|r| r.margin).collect();
    let stats = mdnet_core::margin::MarginStats::from_margins(margins.clone())?;

    let mut out = OutputDir::create(&args.out.out)?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.sample_id.to_string(), r.label.to_string(), r.predicted.to_string(), cell(r.margin)])
        .collect();
    out.write_csv("margins.csv", &MARGINS_HEADER, &rows)?;
    let hist: Vec<Vec<String>> = histogram(&margins, args.bins)
        .into_iter()
        .map(|(a, b, c)| vec![cell(a), cell(b), c.to_string()])
        .collect();
    out.write_csv("margin_histogram.csv", &HISTOGRAM_HEADER, &hist)?;
    let file = MarginsFile {
        samples: records.len(),
        accuracy: records.iter().filter(|r| r.label == r.predicted).count() as f64 / records.len() as f64,
        summary: stats.summary(),
        min: margins.iter().cloned().fold(f64::INFINITY, f64::min),
        max: margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    println!(
        "{} samples: r {:.4}, theta {:.4}, lambda {:.4}",
        file.samples,
        stats.mean_r,
        stats.theta(),
        stats.ratio_lambda
    );
    out.write_json("margins.json", &file)?;
    let mut inputs = data.inputs;
    inputs.push(digest);
    out.finish(
        "margins",
        args,
        seeds([("subset_seed", p.subset_seed), ("data_seed", p.data.data_seed)]),
        inputs,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportSynthArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn run_export_synth(args: &ExportSynthArgs) -> Result<()> {
    if args.data.data != DataSource::Synth {
        bail!("export-synth only exports --data synth");
    }
    let data = args.data.load(1.0, 0)?;
    let mut out = OutputDir::create(&args.out.out)?;
    for (name, set) in [("synth_train.csv", &data.train), ("synth_test.csv", &data.test)] {
        let rows: Vec<Vec<String>> = (0..set.len())
            .map(|i| {
                let mut row = vec![set.labels()[i].to_string()];
                row.extend(feature_cells(set, i));
                row
            })
            .collect();
        out.write_csv(name, &feature_header(&["label"], "x", args.data.features), &rows)?;
    }
    out.finish("export-synth", args, seeds([("data_seed", args.data.data_seed)]), vec![])?;
    Ok(())
}
