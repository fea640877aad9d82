use anyhow::Result;
use clap::Args;
use mdnet_core::checkpoint::Checkpoint;
use mdnet_core::margin::LossKind;
use mdnet_core::train::{train_observed, TelemetryRecord};
use serde::Serialize;

use crate::args::{parse_loss, DataArgs, ModelArgs, OutArgs};
use crate::manifest::{seeds, OutputDir};
use crate::tables::{history_cells, HISTORY_HEADER};

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// mdnet, cross_entropy, hinge or soft_hinge
    #[arg(long, value_parser = parse_loss)]
    pub loss: LossKind,

    /// Seed for initialization, shuffling and the training subset
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Stratified fraction of the training split to train on
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    /// Attach the full bound report to every telemetry epoch
    #[arg(long)]
    pub telemetry_bounds: bool,

    /// Also write checkpoints/epoch-NNNN.json at every telemetry epoch
    #[arg(long)]
    pub save_checkpoints: bool,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    loss: LossKind,
    layer_dims: &'a [usize],
    train_size: usize,
    test_size: usize,
    records: &'a [TelemetryRecord],
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let data = args.data.load(args.fraction, args.seed)?;
    let mut cfg = args.model.train_config(args.loss, &data.train, args.seed);
    cfg.telemetry_bounds = args.telemetry_bounds;
    let mut out = OutputDir::create(&args.out.out)?;

    let mut snapshots = Vec::new();
    let (net, history) = train_observed(&cfg, &data.train, &data.test, |epoch, net| {
        if args.save_checkpoints {
            snapshots.push((epoch, Checkpoint::new(net.clone(), Some(epoch)).to_json()?));
        }
        Ok(())
    })?;
    for (epoch, json) in &snapshots {
        out.write(&format!("checkpoints/epoch-{epoch:04}.json"), json.as_bytes())?;
    }
    out.write("checkpoint.json", Checkpoint::new(net, Some(cfg.epochs)).to_json()?.as_bytes())?;

    let rows: Vec<Vec<String>> = history.records.iter().map(history_cells).collect();
    out.write_csv("history.csv", &HISTORY_HEADER, &rows)?;
    out.write_json(
        "history.json",
        &HistoryFile {
            loss: args.loss,
            layer_dims: &cfg.layer_dims,
            train_size: data.train.len(),
            test_size: data.test.len(),
            records: &history.records,
        },
    )?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train accuracy {:.4}, test accuracy {}, lambda {:.4}",
            last.epoch,
            last.train_accuracy,
            last.test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
            last.margins.ratio_lambda
        );
    }
    out.finish("train", args, seeds([("seed", args.seed), ("data_seed", args.data.data_seed)]), data.inputs)?;
    Ok(())
}
