//! Mini-batch SGD with momentum, per-epoch telemetry and a hyperparameter
//! grid search over the margin-distribution loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundConfig, BoundReport};
use crate::cushion::{estimate_cushions, InterlayerDenominator};
use crate::data::{split_holdout, Dataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::margin::{self, loss_and_grad_into, LossConfig, LossKind, MarginStats, MarginSummary};
use crate::net::{init_params, Network};

/// Stream of the training seed used for shuffling; init uses the seed itself.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub layer_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub telemetry_every: usize,
    /// Recompute `θ := a·√Var` on the training set at the start of each epoch.
    pub adaptive_theta: bool,
    /// Attach a full [`BoundReport`] to every telemetry record.
    pub telemetry_bounds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            layer_dims: vec![2, 32, 2],
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            telemetry_every: 1,
            adaptive_theta: false,
            telemetry_bounds: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.telemetry_every == 0 {
            return bad("telemetry_every must be ≥ 1".into());
        }
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return bad(format!("layer_dims must have ≥ 2 positive entries, got {:?}", self.layer_dims));
        }
        if self.adaptive_theta && self.loss.variant != LossKind::Mdnet {
            return bad("adaptive theta requires the mdnet loss".into());
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when no evaluation set was given.
    pub test_accuracy: Option<f64>,
    pub margins: MarginSummary,
    /// Band half-width in effect during the epoch.
    pub theta_used: f64,
    pub bounds: Option<BoundReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TelemetryRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&TelemetryRecord> {
        self.records.last()
    }
}

/// Fraction of samples whose top score (lowest index on ties) is the label,
/// together with the margin statistics.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, MarginStats)> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut correct = 0usize;
    let mut margins = Vec::with_capacity(data.len());
    for (x, y) in data.iter() {
        let s = net.scores(x.as_slice());
        if margin::argmax(&s) == y {
            correct += 1;
        }
        margins.push(margin::margin(&s, y)?);
    }
    Ok((correct as f64 / data.len() as f64, MarginStats::from_margins(margins)?))
}

pub fn train(cfg: &TrainConfig, train_data: &Dataset, eval_data: &Dataset) -> Result<(Network, TrainHistory)> {
    train_observed(cfg, train_data, eval_data, |_, _| Ok(()))
}

/// [`train`], calling `on_telemetry(epoch, net)` after each telemetry record.
pub fn train_observed<F>(
    cfg: &TrainConfig,
    train_data: &Dataset,
    eval_data: &Dataset,
    mut on_telemetry: F,
) -> Result<(Network, TrainHistory)>
where
    F: FnMut(usize, &Network) -> Result<()>,
{
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (n, k) = (cfg.layer_dims[0], cfg.layer_dims[cfg.layer_dims.len() - 1]);
    if train_data.dim() != n || train_data.classes() != k {
        return Err(Error::DimensionMismatch(format!(
            "network maps {n} inputs to {k} classes, training set has {} features and {} classes",
            train_data.dim(),
            train_data.classes()
        )));
    }
    if !eval_data.is_empty() && (eval_data.dim() != n || eval_data.classes() != k) {
        return Err(Error::DimensionMismatch("evaluation set does not match the network".into()));
    }

    let mut net = init_params(&cfg.layer_dims, cfg.seed)?;
    let mut velocity: Vec<DenseMatrix> = net.weights().iter().map(|w| DenseMatrix::zeros(w.rows(), w.cols())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut loss_cfg = cfg.loss;
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        if cfg.adaptive_theta {
            let (_, stats) = evaluate(&net, train_data)?;
            loss_cfg.theta = adaptive_theta(&cfg.loss, stats.theta());
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_data.batch_matrix(batch);
            let trace = net.forward_batch(&x);
            let scores = trace.scores();
            let mut dscores = DenseMatrix::zeros(scores.rows(), scores.cols());
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (row, &i) in batch.iter().enumerate() {
                let g = dscores.row_mut(row);
                batch_loss += loss_and_grad_into(scores.row(row), train_data.labels()[i], &loss_cfg, g);
                g.iter_mut().for_each(|v| *v *= scale);
            }
            // a flat loss region can hide overflowed scores
            let bad_score = scores.as_slice().iter().copied().find(|s| !s.is_finite());
            if !batch_loss.is_finite() || bad_score.is_some() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: bad_score.filter(|_| batch_loss.is_finite()).unwrap_or(batch_loss),
                });
            }
            loss_sum += batch_loss;
            let grads = net.backward_batch(&trace, &dscores);
            for ((w, v), g) in net.weights_mut().iter_mut().zip(&mut velocity).zip(&grads.grads) {
                for ((wv, vv), gv) in w.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice()) {
                    *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
                    *wv += *vv;
                }
            }
        }
        if net.weights().iter().any(|w| w.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size) - 1,
                value: f64::NAN,
            });
        }

        if epoch % cfg.telemetry_every == 0 || epoch == cfg.epochs {
            let (train_accuracy, stats) = evaluate(&net, train_data)?;
            let test_accuracy = if eval_data.is_empty() {
                None
            } else {
                Some(evaluate(&net, eval_data)?.0)
            };
            let bounds = if cfg.telemetry_bounds {
                let cushions = estimate_cushions(&net, train_data, InterlayerDenominator::default())?;
                Some(bound_report(&net, train_data, &stats, &cushions, &BoundConfig::default())?)
            } else {
                None
            };
            log::info!(
                "epoch {epoch}: loss {:.6}, train acc {:.4}, r {:.4}, lambda {:.4}",
                loss_sum / train_data.len() as f64,
                train_accuracy,
                stats.mean_r,
                stats.ratio_lambda
            );
            history.records.push(TelemetryRecord {
                epoch,
                train_loss: loss_sum / train_data.len() as f64,
                train_accuracy,
                test_accuracy,
                margins: stats.summary(),
                theta_used: loss_cfg.theta,
                bounds,
            });
            on_telemetry(epoch, &net)?;
        }
    }
    Ok((net, history))
}

/// `a·√Var`, clamped into `[r/1000, r·(1 − 1/1000)]` so the band stays valid.
fn adaptive_theta(base: &LossConfig, margin_std: f64) -> f64 {
    let r = base.r;
    (base.theta_scale_a * margin_std).clamp(r * 1e-3, r * (1.0 - 1e-3))
}

/// Candidate values for each mdnet hyperparameter; combinations are visited
/// with `r` outermost and `eta` innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub r: f64,
    pub theta: f64,
    pub eta: f64,
    pub valid: bool,
    /// Validation accuracy; `None` for invalid combinations.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_row: usize,
    pub table: Vec<GridRow>,
}

/// Trains every valid grid combination on the data minus `holdout` samples
/// and keeps the best validation accuracy (first in grid order on ties).
pub fn grid_search(base: &TrainConfig, grid: &Grid, data: &Dataset, holdout: usize) -> Result<GridResult> {
    if grid.r.is_empty() || grid.theta.is_empty() || grid.eta.is_empty() {
        return Err(Error::InvalidArgument("grid has an empty axis".into()));
    }
    if holdout == 0 {
        return Err(Error::InvalidArgument("grid search needs a non-empty holdout".into()));
    }
    let (fit, val) = split_holdout(data, holdout, base.seed)?;
    let mut table = Vec::new();
    let mut best: Option<(usize, f64, TrainConfig)> = None;
    for &r in &grid.r {
        for &theta in &grid.theta {
            for &eta in &grid.eta {
                let mut cfg = base.clone();
                cfg.loss = LossConfig { r, theta, eta, ..base.loss };
                cfg.loss.variant = LossKind::Mdnet;
                if let Err(e) = cfg.validate() {
                    log::warn!("grid cell r = {r}, theta = {theta}, eta = {eta} rejected: {e}");
                    table.push(GridRow { r, theta, eta, valid: false, val_accuracy: None });
                    continue;
                }
                let (net, _) = train(&cfg, &fit, &val).map_err(|e| Error::GridCell {
                    r,
                    theta,
                    eta,
                    source: Box::new(e),
                })?;
                let (acc, _) = evaluate(&net, &val)?;
                if best.as_ref().map_or(true, |(_, b, _)| acc > *b) {
                    best = Some((table.len(), acc, cfg));
                }
                table.push(GridRow { r, theta, eta, valid: true, val_accuracy: Some(acc) });
            }
        }
    }
    let (best_row, _, best) = best.ok_or_else(|| Error::InvalidConfig("every grid combination is invalid".into()))?;
    Ok(GridResult { best, best_row, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn cfg(dims: Vec<usize>) -> TrainConfig {
        TrainConfig {
            layer_dims: dims,
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = synth_blobs(3, 4, 10, 3.0, 1).unwrap();
        let mut c = cfg(vec![4, 6, 3]);
        c.learning_rate = 0.0;
        let (net, _) = train(&c, &data, &data).unwrap();
        assert_eq!(net, init_params(&c.layer_dims, c.seed).unwrap());
    }

    #[test]
    fn deterministic_history() {
        let data = synth_blobs(2, 3, 12, 2.0, 2).unwrap();
        let c = cfg(vec![3, 5, 2]);
        assert_eq!(train(&c, &data, &data).unwrap(), train(&c, &data, &data).unwrap());
    }

    #[test]
    fn final_epoch_always_recorded() {
        let data = synth_blobs(2, 3, 6, 2.0, 2).unwrap();
        let mut c = cfg(vec![3, 2]);
        c.telemetry_every = 2;
        let (_, h) = train(&c, &data, &Dataset::new(vec![], vec![], 2, 1.0).unwrap()).unwrap();
        let epochs: Vec<usize> = h.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![2, 3]);
        assert_eq!(h.records[0].test_accuracy, None);
    }

    #[test]
    fn rejects_mismatched_data() {
        let data = synth_blobs(2, 3, 6, 2.0, 2).unwrap();
        assert!(train(&cfg(vec![4, 2]), &data, &data).is_err());
        assert!(train(&cfg(vec![3, 3]), &data, &data).is_err());
    }

    #[test]
    fn diverging_run_names_epoch_and_batch() {
        let data = synth_blobs(2, 3, 8, 2.0, 2).unwrap();
        let mut c = cfg(vec![3, 16, 16, 2]);
        c.learning_rate = 1e150;
        c.momentum = 0.0;
        c.loss = LossConfig::with_variant(LossKind::Hinge);
        match train(&c, &data, &data) {
            Err(Error::NonFiniteLoss { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn adaptive_theta_stays_in_band() {
        let base = LossConfig::default();
        assert_eq!(adaptive_theta(&base, 0.0), base.r * 1e-3);
        assert!(adaptive_theta(&base, 100.0) < base.r);
        assert_eq!(adaptive_theta(&base, 0.7), 0.7);
    }
}
