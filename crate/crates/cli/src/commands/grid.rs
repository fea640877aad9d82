use anyhow::Result;
use clap::Args;
use mdnet_core::margin::LossKind;
use mdnet_core::train::{grid_search, Grid, GridResult};
use serde::Serialize;

use crate::args::{DataArgs, ModelArgs, OutArgs};
use crate::manifest::{seeds, OutputDir};
use crate::tables::{cell, opt_cell, GRID_HEADER};

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, value_delimiter = ',', required = true)]
    pub r_grid: Vec<f64>,

    #[arg(long, value_delimiter = ',', required = true)]
    pub theta_grid: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub eta_grid: Vec<f64>,

    /// Training samples held out for validation
    #[arg(long)]
    pub holdout: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,

    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn run(args: &GridArgs) -> Result<()> {
    let data = args.data.load(args.fraction, args.seed)?;
    let base = args.model.train_config(LossKind::Mdnet, &data.train, args.seed);
    let grid = Grid {
        r: args.r_grid.clone(),
        theta: args.theta_grid.clone(),
        eta: args.eta_grid.clone(),
    };
    let result: GridResult = grid_search(&base, &grid, &data.train, args.holdout)?;

    let mut out = OutputDir::create(&args.out.out)?;
    let rows: Vec<Vec<String>> = result
        .table
        .iter()
        .map(|g| vec![cell(g.r), cell(g.theta), cell(g.eta), g.valid.to_string(), opt_cell(g.val_accuracy)])
        .collect();
    out.write_csv("grid.csv", &GRID_HEADER, &rows)?;
    let best = &result.table[result.best_row];
    println!(
        "best r {}, theta {}, eta {}: validation accuracy {}",
        best.r,
        best.theta,
        best.eta,
        opt_cell(best.val_accuracy)
    );
    out.write_json("grid.json", &result)?;
    out.finish(
        "grid",
        args,
        seeds([("seed", args.seed), ("data_seed", args.data.data_seed)]),
        data.inputs,
    )?;
    Ok(())
}
