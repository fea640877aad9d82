//! Flag groups shared between subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use mdnet_core::bounds::MarginPolicy;
use mdnet_core::checkpoint::Checkpoint;
use mdnet_core::data::{load_idx, split_holdout, subset_fraction, synth_blobs};
use mdnet_core::margin::{LossConfig, LossKind};
use mdnet_core::train::TrainConfig;
use mdnet_core::{Dataset, DenseVector};
use serde::Serialize;

use crate::manifest::FileDigest;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte.gz";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte.gz";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte.gz";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte.gz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Gaussian blobs generated from the synth flags
    Synth,
    /// Gzipped IDX files in --mnist-dir
    Mnist,
    /// `label,x0,x1,...` rows from --train-csv and --test-csv
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset to load
    #[arg(long, value_enum, default_value_t = DataSource::Synth)]
    pub data: DataSource,

    /// Directory holding the four MNIST IDX files
    #[arg(long, default_value = "data/mnist")]
    pub mnist_dir: PathBuf,

    /// Training rows for --data csv
    #[arg(long)]
    pub train_csv: Option<PathBuf>,

    /// Test rows for --data csv
    #[arg(long)]
    pub test_csv: Option<PathBuf>,

    /// Class count for --data csv when larger than max label + 1
    #[arg(long)]
    pub csv_classes: Option<usize>,

    /// Use only the first N MNIST test images
    #[arg(long)]
    pub test_limit: Option<usize>,

    /// Number of synthetic classes
    #[arg(long, default_value_t = 3)]
    pub classes: usize,

    /// Synthetic feature dimension
    #[arg(long, default_value_t = 10)]
    pub features: usize,

    /// Synthetic samples per class, before the test split
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,

    /// Distance scale between synthetic class centres
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,

    /// Seed of the synthetic generator and its train/test split
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,

    /// Share of synthetic samples held out as the test split
    #[arg(long, default_value_t = 0.2)]
    pub test_share: f64,
}

pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub inputs: Vec<FileDigest>,
}

impl LoadedData {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

impl DataArgs {
    /// Train and test splits; the training split is reduced to a stratified
    /// `fraction` drawn with `subset_seed`.
    pub fn load(&self, fraction: f64, subset_seed: u64) -> Result<LoadedData> {
        let (train, test, inputs) = match self.data {
            DataSource::Synth => {
                if !(0.0..1.0).contains(&self.test_share) {
                    bail!("--test-share must lie in [0, 1), got {}", self.test_share);
                }
                let all = synth_blobs(self.classes, self.features, self.per_class, self.separation, self.data_seed)?;
                let holdout = (self.test_share * all.len() as f64).round() as usize;
                if holdout == 0 {
                    (all, Dataset::new(vec![], vec![], self.classes, 1.0)?, vec![])
                } else {
                    let (train, test) = split_holdout(&all, holdout, self.data_seed)?;
                    (train, test, vec![])
                }
            }
            DataSource::Mnist => {
                let dir = &self.mnist_dir;
                let files = [MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS, MNIST_TEST_IMAGES, MNIST_TEST_LABELS];
                let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
                let inputs = paths.iter().map(|p| FileDigest::of_file(p)).collect::<Result<Vec<_>>>()?;
                let train = load_idx(&paths[0], &paths[1]).with_context(|| format!("loading MNIST from {}", dir.display()))?;
                let mut test = load_idx(&paths[2], &paths[3]).with_context(|| format!("loading MNIST from {}", dir.display()))?;
                if let Some(n) = self.test_limit {
                    let keep: Vec<usize> = (0..n.min(test.len())).collect();
                    test = test.select(&keep);
                }
                (train, test, inputs)
            }
            DataSource::Csv => self.load_csv()?,
        };
        let train = if fraction == 1.0 {
            train
        } else {
            subset_fraction(&train, fraction, subset_seed, true)?
        };
        Ok(LoadedData { train, test, inputs })
    }
}

impl DataArgs {
    fn load_csv(&self) -> Result<(Dataset, Dataset, Vec<FileDigest>)> {
        let Some(train_path) = &self.train_csv else {
            bail!("--data csv needs --train-csv");
        };
        let mut inputs = vec![FileDigest::of_file(train_path)?];
        let (train_x, train_y) = read_rows(train_path)?;
        let (test_x, test_y) = match &self.test_csv {
            Some(p) => {
                inputs.push(FileDigest::of_file(p)?);
                read_rows(p)?
            }
            None => (vec![], vec![]),
        };
        let k = train_y.iter().chain(&test_y).max().map_or(1, |m| m + 1).max(self.csv_classes.unwrap_or(0));
        // one scale for both splits so the test rows live in the same space
        let max = train_x.iter().chain(&test_x).map(DenseVector::norm).fold(0.0, f64::max);
        let scale = |xs: Vec<DenseVector>| -> Vec<DenseVector> {
            if max > 0.0 {
                xs.iter().map(|x| x.scaled(1.0 / max)).collect()
            } else {
                xs
            }
        };
        Ok((
            Dataset::new(scale(train_x), train_y, k, 1.0)?,
            Dataset::new(scale(test_x), test_y, k, 1.0)?,
            inputs,
        ))
    }
}

fn read_rows(path: &Path) -> Result<(Vec<DenseVector>, Vec<usize>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || format!("{} row {}: expected label,x0,x1,...", path.display(), i + 1);
        let label: usize = rec.get(0).with_context(bad)?.trim().parse().with_context(bad)?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(bad)?;
        xs.push(DenseVector::new(values)?);
        ys.push(label);
    }
    Ok((xs, ys))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub hidden: Vec<usize>,

    /// Centre of the mdnet zero-loss band
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,

    /// Half-width of the mdnet zero-loss band
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,

    /// Weight of the mdnet penalty above the band
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,

    /// Target margin of the hinge losses
    #[arg(long, default_value_t = 1.0)]
    pub hinge_margin: f64,

    /// Reset theta to this multiple of the margin std each epoch
    #[arg(long)]
    pub adaptive_theta: bool,

    #[arg(long, default_value_t = 1.0)]
    pub theta_scale: f64,

    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,

    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    /// Record telemetry every N epochs (the last epoch is always recorded)
    #[arg(long, default_value_t = 1)]
    pub telemetry_every: usize,
}

impl ModelArgs {
    pub fn train_config(&self, loss: LossKind, data: &Dataset, seed: u64) -> TrainConfig {
        let mut layer_dims = vec![data.dim()];
        layer_dims.extend(&self.hidden);
        layer_dims.push(data.classes());
        TrainConfig {
            loss: LossConfig {
                variant: loss,
                r: self.r,
                theta: self.theta,
                eta: self.eta,
                hinge_margin: self.hinge_margin,
                theta_scale_a: self.theta_scale,
            },
            layer_dims,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            seed,
            telemetry_every: self.telemetry_every,
            adaptive_theta: self.adaptive_theta,
            telemetry_bounds: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory
    #[arg(long, env = "MDNET_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
}

pub fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: mdnet_core::Error| e.to_string())
}

/// `min`, or a percentile written `p5` / `5`.
pub fn parse_policy(s: &str) -> std::result::Result<MarginPolicy, String> {
    if s == "min" {
        return Ok(MarginPolicy::Minimum);
    }
    let p: f64 = s
        .strip_prefix('p')
        .unwrap_or(s)
        .parse()
        .map_err(|_| format!("expected `min` or a percentile like `p5`, got {s:?}"))?;
    if !(0.0..=100.0).contains(&p) {
        return Err(format!("percentile must lie in [0, 100], got {p}"));
    }
    Ok(MarginPolicy::Percentile(p))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, FileDigest)> {
    let digest = FileDigest::of_file(path)?;
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((ck, digest))
}

pub fn check_fits(net: &mdnet_core::Network, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        bail!("the selected split is empty");
    }
    if net.input_dim() != data.dim() || net.output_dim() != data.classes() {
        bail!(
            "network maps {} inputs to {} classes, data has {} features and {} classes",
            net.input_dim(),
            net.output_dim(),
            data.dim(),
            data.classes()
        );
    }
    Ok(())
}

/// Features as CSV cells.
pub fn feature_cells(data: &Dataset, i: usize) -> impl Iterator<Item = String> + '_ {
    data.features()[i].as_slice().iter().map(|v| mdnet_core::report::csv_float(*v))
}

