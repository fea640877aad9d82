//! Multiclass margins, margin-distribution statistics and the training losses.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{DenseVector, norm2};
use crate::net::{self, Network};

/// Index of the largest score other than `y`; lowest index wins ties.
pub fn top_competitor(scores: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &s) in scores.iter().enumerate() {
        if j != y && (best == usize::MAX || s > scores[best]) {
            best = j;
        }
    }
    best
}

/// Predicted label, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

fn check_label(k: usize, y: usize) -> Result<()> {
    if k < 2 || y >= k {
        return Err(Error::LabelOutOfRange { label: y, classes: k });
    }
    Ok(())
}

/// `scores[y] − max_{j≠y} scores[j]`.
pub fn margin(scores: &[f64], y: usize) -> Result<f64> {
    check_label(scores.len(), y)?;
    Ok(scores[y] - scores[top_competitor(scores, y)])
}

/// First and second moments of a margin sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub margins: Vec<f64>,
    pub mean_r: f64,
    /// Population variance `θ²`.
    pub var_theta2: f64,
    /// `θ / r`; `+∞` when the mean is not positive.
    #[serde(with = "crate::report::float")]
    pub ratio_lambda: f64,
}

impl MarginStats {
    pub fn from_margins(margins: Vec<f64>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::Empty("margin list"));
        }
        let m = margins.len() as f64;
        let mean_r = margins.iter().sum::<f64>() / m;
        let var_theta2 = margins.iter().map(|g| (g - mean_r).powi(2)).sum::<f64>() / m;
        let ratio_lambda = if mean_r > 0.0 {
            var_theta2.sqrt() / mean_r
        } else {
            f64::INFINITY
        };
        Ok(Self {
            margins,
            mean_r,
            var_theta2,
            ratio_lambda,
        })
    }

    pub fn theta(&self) -> f64 {
        self.var_theta2.sqrt()
    }

    /// Usable in the capacity term: positive mean and `λ < 1`.
    pub fn is_valid(&self) -> bool {
        self.mean_r > 0.0 && self.ratio_lambda < 1.0
    }

    pub fn summary(&self) -> MarginSummary {
        MarginSummary {
            mean_r: self.mean_r,
            var_theta2: self.var_theta2,
            ratio_lambda: self.ratio_lambda,
        }
    }
}

/// [`MarginStats`] without the per-sample list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub mean_r: f64,
    pub var_theta2: f64,
    #[serde(with = "crate::report::float")]
    pub ratio_lambda: f64,
}

pub fn margin_stats(net: &Network, data: &Dataset) -> Result<MarginStats> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let margins = data
        .iter()
        .map(|(x, y)| margin(&net.scores(x.as_slice()), y))
        .collect::<Result<Vec<_>>>()?;
    MarginStats::from_margins(margins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mdnet,
    CrossEntropy,
    Hinge,
    SoftHinge,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Mdnet,
        LossKind::CrossEntropy,
        LossKind::Hinge,
        LossKind::SoftHinge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mdnet => "mdnet",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Hinge => "hinge",
            LossKind::SoftHinge => "soft_hinge",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdnet" => Ok(LossKind::Mdnet),
            "cross_entropy" | "xent" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            "soft_hinge" | "soft-hinge" => Ok(LossKind::SoftHinge),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossKind,
    /// Centre of the zero-loss band.
    pub r: f64,
    /// Half-width of the zero-loss band.
    pub theta: f64,
    /// Weight of the penalty above the band.
    pub eta: f64,
    pub hinge_margin: f64,
    /// Scale for the adaptive band width `θ := a·√Var`.
    pub theta_scale_a: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossKind::Mdnet,
            r: 2.0,
            theta: 0.5,
            eta: 1.0,
            hinge_margin: 1.0,
            theta_scale_a: 1.0,
        }
    }
}

impl LossConfig {
    pub fn mdnet(r: f64, theta: f64, eta: f64) -> Self {
        Self {
            variant: LossKind::Mdnet,
            r,
            theta,
            eta,
            ..Self::default()
        }
    }

    pub fn with_variant(variant: LossKind) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self.variant {
            LossKind::Mdnet => {
                if !(self.theta > 0.0 && self.r > self.theta && self.r.is_finite()) {
                    return bad(format!("need r > theta > 0, got r = {}, theta = {}", self.r, self.theta));
                }
                if !(self.eta >= 0.0 && self.eta.is_finite()) {
                    return bad(format!("need eta ≥ 0, got {}", self.eta));
                }
                if !(self.theta_scale_a > 0.0) {
                    return bad(format!("need theta_scale_a > 0, got {}", self.theta_scale_a));
                }
            }
            LossKind::Hinge | LossKind::SoftHinge => {
                if !(self.hinge_margin > 0.0 && self.hinge_margin.is_finite()) {
                    return bad(format!("need hinge_margin > 0, got {}", self.hinge_margin));
                }
            }
            LossKind::CrossEntropy => {}
        }
        Ok(())
    }
}

/// Convex margin-distribution loss: quadratic below `r − θ`, zero on the
/// band `(r − θ, r + θ]`, `η`-weighted quadratic above.
pub fn mdnet_loss(gamma: f64, cfg: &LossConfig) -> Result<f64> {
    if cfg.variant != LossKind::Mdnet {
        return Err(Error::InvalidConfig(format!("expected mdnet, got {}", cfg.variant)));
    }
    cfg.validate()?;
    Ok(mdnet_value_and_slope(gamma, cfg).0)
}

fn mdnet_value_and_slope(gamma: f64, cfg: &LossConfig) -> (f64, f64) {
    let lo = cfg.r - cfg.theta;
    let hi = cfg.r + cfg.theta;
    if gamma <= lo {
        let t = lo - gamma;
        (t * t / (lo * lo), -2.0 * t / (lo * lo))
    } else if gamma <= hi {
        (0.0, 0.0)
    } else {
        let t = gamma - hi;
        (cfg.eta * t * t / (hi * hi), 2.0 * cfg.eta * t / (hi * hi))
    }
}

/// Loss value and `∂loss/∂scores` for one sample.
///
/// Margin-based variants route `∂ℓ/∂γ` as `+1` to the label and `−1` to the
/// single strongest competitor.
pub fn loss_and_score_grad(scores: &[f64], y: usize, cfg: &LossConfig) -> Result<(f64, DenseVector)> {
    check_label(scores.len(), y)?;
    cfg.validate()?;
    let mut grad = vec![0.0; scores.len()];
    let loss = loss_and_grad_into(scores, y, cfg, &mut grad);
    Ok((loss, DenseVector::from_vec_unchecked(grad)))
}

/// Unchecked core of [`loss_and_score_grad`]; writes into `grad`.
pub(crate) fn loss_and_grad_into(scores: &[f64], y: usize, cfg: &LossConfig, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    if cfg.variant == LossKind::CrossEntropy {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let log_z = max + sum.ln();
        for (g, s) in grad.iter_mut().zip(scores) {
            *g = (s - log_z).exp();
        }
        grad[y] -= 1.0;
        return log_z - scores[y];
    }

    let j = top_competitor(scores, y);
    let gamma = scores[y] - scores[j];
    let (loss, slope) = match cfg.variant {
        LossKind::Mdnet => mdnet_value_and_slope(gamma, cfg),
        LossKind::Hinge => {
            let z = cfg.hinge_margin - gamma;
            if z > 0.0 {
                (z, -1.0)
            } else {
                (0.0, 0.0)
            }
        }
        LossKind::SoftHinge => {
            let z = cfg.hinge_margin - gamma;
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            let sigmoid = 1.0 / (1.0 + (-z).exp());
            (softplus, -sigmoid)
        }
        LossKind::CrossEntropy => unreachable!(),
    };
    grad[y] = slope;
    grad[j] = -slope;
    loss
}

/// Empirical `(r, θ)` band loss: fraction of margins `≤ r − θ` plus fraction
/// `> r + θ`.
pub fn band_loss_empirical(margins: &[f64], r: f64, theta: f64) -> Result<f64> {
    if margins.is_empty() {
        return Err(Error::Empty("margin list"));
    }
    if !(theta > 0.0 && r > theta) {
        return Err(Error::InvalidConfig(format!("need r > theta > 0, got r = {r}, theta = {theta}")));
    }
    let outside = margins
        .iter()
        .filter(|&&g| g <= r - theta || g > r + theta)
        .count();
    Ok(outside as f64 / margins.len() as f64)
}

/// Within-class and between-class scatter traces of an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    /// `Σ_k Σ_{z∈k} ‖z − μ_k‖²`
    pub s_a: f64,
    /// `Σ_k n_k ‖μ_k − μ‖²`
    pub s_e: f64,
    /// `s_e / s_a`, `+∞` when the classes have no internal spread.
    #[serde(with = "crate::report::float")]
    pub ratio: f64,
}

/// Between-to-within scatter ratio, `+∞` when `s_a = 0`.
pub fn scatter_ratio(s_e: f64, s_a: f64) -> f64 {
    if s_a == 0.0 {
        f64::INFINITY
    } else {
        s_e / s_a
    }
}

pub fn variance_decomposition(embeddings: &[DenseVector], labels: &[usize]) -> Result<ScatterSummary> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(Error::Empty("embeddings"));
    }
    let dim = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch("embeddings differ in dimension".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    let mut total = vec![0.0; dim];
    for (z, &y) in embeddings.iter().zip(labels) {
        counts[y] += 1;
        for ((s, t), v) in sums[y].iter_mut().zip(total.iter_mut()).zip(z.as_slice()) {
            *s += v;
            *t += v;
        }
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InvalidArgument(
            "variance decomposition needs at least two classes".into(),
        ));
    }
    let n = embeddings.len() as f64;
    let mu: Vec<f64> = total.iter().map(|t| t / n).collect();
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();

    let s_a = embeddings
        .iter()
        .zip(labels)
        .map(|(z, &y)| squared_distance(z.as_slice(), &means[y]))
        .sum::<f64>();
    let s_e = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * squared_distance(m, &mu))
        .sum::<f64>();
    Ok(ScatterSummary {
        s_a,
        s_e,
        ratio: scatter_ratio(s_e, s_a),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = norm2(&diff);
    n * n
}

/// Per-sample margin records for CSV export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub sample_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub margin: f64,
}

pub fn margin_records(net: &Network, data: &Dataset) -> Result<Vec<MarginRecord>> {
    data.iter()
        .enumerate()
        .map(|(sample_id, (x, y))| {
            let s = net::forward(net, x)?;
            let scores = s.scores().as_slice();
            Ok(MarginRecord {
                sample_id,
                label: y,
                predicted: argmax(scores),
                margin: margin(scores, y)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::mdnet(2.0, 0.5, 1.0)
    }

    #[test]
    fn margins_by_hand() {
        let s = [3.0, 1.0, -0.5];
        assert_eq!(margin(&s, 0).unwrap(), 2.0);
        assert_eq!(margin(&s, 2).unwrap(), -3.5);
        assert_eq!(margin(&[1.0, 1.0], 0).unwrap(), 0.0);
        assert!(matches!(margin(&s, 3), Err(Error::LabelOutOfRange { .. })));
        assert!(margin(&[1.0], 0).is_err());
    }

    #[test]
    fn competitor_ties_go_to_lowest_index() {
        assert_eq!(top_competitor(&[0.0, 5.0, 5.0, 5.0], 0), 1);
        assert_eq!(top_competitor(&[5.0, 5.0, 0.0], 1), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn stats_by_hand() {
        let s = MarginStats::from_margins(vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean_r, s.var_theta2, s.ratio_lambda), (2.0, 0.0, 0.0));
        let s = MarginStats::from_margins(vec![1.0, 3.0]).unwrap();
        assert_eq!((s.mean_r, s.var_theta2, s.ratio_lambda), (2.0, 1.0, 0.5));
        assert!(s.is_valid());
        let s = MarginStats::from_margins(vec![-1.0, 0.5]).unwrap();
        assert!(s.ratio_lambda.is_infinite() && !s.is_valid());
        assert!(MarginStats::from_margins(vec![]).is_err());
    }

    #[test]
    fn mdnet_loss_values() {
        assert_eq!(mdnet_loss(2.0, &cfg()).unwrap(), 0.0);
        assert!((mdnet_loss(1.0, &cfg()).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!((mdnet_loss(3.0, &cfg()).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(mdnet_loss(0.0, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn mdnet_loss_rejects_bad_config() {
        assert!(mdnet_loss(1.0, &LossConfig::mdnet(1.0, 1.0, 1.0)).is_err());
        assert!(mdnet_loss(1.0, &LossConfig::mdnet(1.0, 0.0, 1.0)).is_err());
        assert!(mdnet_loss(1.0, &LossConfig::mdnet(1.0, 0.5, -1.0)).is_err());
        assert!(mdnet_loss(1.0, &LossConfig::with_variant(LossKind::Hinge)).is_err());
    }

    #[test]
    fn flat_band_has_zero_gradient() {
        let (l, g) = loss_and_score_grad(&[2.2, 0.0, 0.1], 0, &cfg()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_two_class() {
        let c = LossConfig::with_variant(LossKind::CrossEntropy);
        let (l, g) = loss_and_score_grad(&[0.0, 0.0], 0, &c).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn hinge_and_soft_hinge_values() {
        let h = LossConfig::with_variant(LossKind::Hinge);
        let (l, g) = loss_and_score_grad(&[0.5, 0.0, 0.2], 0, &h).unwrap();
        assert!((l - 0.7).abs() < 1e-15);
        assert_eq!(g.as_slice(), &[-1.0, 0.0, 1.0]);
        let s = LossConfig::with_variant(LossKind::SoftHinge);
        let (l, _) = loss_and_score_grad(&[1.0, 0.0], 0, &s).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // no overflow far from the hinge
        let (l, _) = loss_and_score_grad(&[-800.0, 0.0], 0, &s).unwrap();
        assert!((l - 801.0).abs() < 1e-9);
    }

    #[test]
    fn band_loss() {
        assert_eq!(band_loss_empirical(&[2.0, 2.0], 2.0, 1.0).unwrap(), 0.0);
        assert!((band_loss_empirical(&[0.0, 2.0, 10.0], 2.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // lower edge counts as outside, upper edge inside
        assert_eq!(band_loss_empirical(&[1.0, 3.0], 2.0, 1.0).unwrap(), 0.5);
        assert!(band_loss_empirical(&[], 2.0, 1.0).is_err());
        assert!(band_loss_empirical(&[1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn scatter_blobs() {
        let e: Vec<DenseVector> = [[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]]
            .iter()
            .map(|p| DenseVector::new(p.to_vec()).unwrap())
            .collect();
        let s = variance_decomposition(&e, &[0, 0, 1, 1]).unwrap();
        assert_eq!((s.s_a, s.s_e, s.ratio), (4.0, 100.0, 25.0));
    }

    #[test]
    fn scatter_degenerate_cases() {
        let p = |x: f64| DenseVector::new(vec![x]).unwrap();
        let s = variance_decomposition(&[p(0.0), p(0.0), p(1.0)], &[0, 0, 1]).unwrap();
        assert_eq!(s.s_a, 0.0);
        assert!(s.ratio.is_infinite());
        assert!(variance_decomposition(&[p(0.0), p(1.0)], &[1, 1]).is_err());
        assert!(variance_decomposition(&[p(0.0)], &[0, 1]).is_err());
    }

    #[test]
    fn published_ratio() {
        let r = scatter_ratio(15692.0, 804.0);
        assert_eq!(format!("{r:.2}"), "19.52");
    }
}
