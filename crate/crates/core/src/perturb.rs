//! Monte-Carlo checks of the extreme-value tail and of the output
//! perturbation bound under Frobenius-scaled Gaussian weight noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cushion::CushionProfile;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::margin::MarginStats;
use crate::net::Network;
use crate::report::{self, float};

pub const MIN_EXTREME_TRIALS: usize = 1000;
pub const MIN_PERTURB_TRIALS: usize = 30;
/// Failure probability of the perturbation condition.
pub const PERTURB_DELTA: f64 = 0.5;

/// Frequency with which a fresh standard-Gaussian draw is at least the
/// maximum of `m` others. Tends to `1/(m+1)`.
pub fn extreme_value_mc(m: usize, trials: usize, seed: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be ≥ 1".into()));
    }
    if trials < MIN_EXTREME_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_EXTREME_TRIALS} trials, got {trials}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let v: f64 = StandardNormal.sample(&mut rng);
        let mut max = f64::NEG_INFINITY;
        for _ in 0..m {
            let s: f64 = StandardNormal.sample(&mut rng);
            max = max.max(s);
        }
        if v >= max {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// `σ = (r−θ) / (8 c d (r+θ) √S)` with `S = Σ 1/(μᵢ² μᵢ→²)`.
pub fn sigma_formula(r: f64, theta: f64, c: f64, d: usize, resilience_sum: f64) -> Result<f64> {
    if !(r > theta) || !(theta >= 0.0) {
        return Err(Error::DegenerateMargins { r, theta });
    }
    if !(c >= 1.0 && c.is_finite()) || d == 0 || !(resilience_sum > 0.0 && resilience_sum.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need finite c ≥ 1, d ≥ 1 and a positive finite resilience sum, got c = {c}, d = {d}, sum = {resilience_sum}"
        )));
    }
    Ok((r - theta) / (8.0 * c * d as f64 * (r + theta) * resilience_sum.sqrt()))
}

pub fn sigma_from_margins(stats: &MarginStats, cushions: &CushionProfile, d: usize) -> Result<f64> {
    if cushions.is_degenerate() {
        return Err(Error::InvalidArgument("cushion profile is degenerate".into()));
    }
    sigma_formula(stats.mean_r, stats.theta(), cushions.contraction_c(), d, cushions.resilience_sum())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal matrices shaped like the weights.
fn draw_directions(net: &Network, rng: &mut ChaCha8Rng) -> Vec<DenseMatrix> {
    net.weights()
        .iter()
        .map(|w| {
            let data = (0..w.rows() * w.cols()).map(|_| StandardNormal.sample(rng)).collect();
            DenseMatrix::from_vec_unchecked(w.rows(), w.cols(), data)
        })
        .collect()
}

/// `Wᵢ + σ Zᵢ ‖Wᵢ‖_F`.
fn apply_noise(net: &Network, directions: &[DenseMatrix], sigma: f64) -> Network {
    if sigma == 0.0 {
        return net.clone();
    }
    let mut out = net.clone();
    for (w, z) in out.weights_mut().iter_mut().zip(directions) {
        let scale = sigma * w.frobenius_sq().sqrt();
        for (v, zz) in w.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *v += scale * zz;
        }
    }
    out
}

/// Each `Wᵢ` replaced by `Wᵢ + Bᵢ ‖Wᵢ‖_F` with `Bᵢ` i.i.d. `N(0, σ²)`.
pub fn inject_noise(net: &Network, sigma: f64, seed: u64) -> Result<Network> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(net.clone());
    }
    let z = draw_directions(net, &mut rng_for(seed, 0));
    Ok(apply_noise(net, &z, sigma))
}

/// Output deltas of one noise draw at `σ/2`, `σ` and `2σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDelta {
    pub trial: usize,
    pub half_sigma: f64,
    pub sigma: f64,
    pub double_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub r: f64,
    pub theta: f64,
    /// `(r − θ)/8`
    pub threshold: f64,
    pub median: f64,
    /// `(1 − δ)`-quantile of the deltas at `σ`.
    pub quantile: f64,
    pub quantile_delta: f64,
    pub max: f64,
    pub fraction_below_threshold: f64,
    pub median_half_sigma: f64,
    pub median_double_sigma: f64,
    /// `median(2σ) / median(σ)`; `None` when the median at `σ` is zero.
    #[serde(with = "float::option")]
    pub slope_ratio: Option<f64>,
    pub deltas: Vec<TrialDelta>,
}

/// Noise experiment at the σ implied by the margins and cushions.
pub fn perturbation_experiment(
    net: &Network,
    data: &Dataset,
    stats: &MarginStats,
    cushions: &CushionProfile,
    trials: usize,
    seed: u64,
) -> Result<PerturbReport> {
    let sigma = sigma_from_margins(stats, cushions, net.depth())?;
    perturbation_at_sigma(net, data, stats, sigma, trials, seed)
}

/// Noise experiment at an explicit σ. Trial `t` draws one direction set from
/// stream `t` of `seed` and evaluates it at all three scales.
pub fn perturbation_at_sigma(
    net: &Network,
    data: &Dataset,
    stats: &MarginStats,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<PerturbReport> {
    let (r, theta) = (stats.mean_r, stats.theta());
    if !(r > theta) {
        return Err(Error::DegenerateMargins { r, theta });
    }
    if trials < MIN_PERTURB_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PERTURB_TRIALS} trials, got {trials}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be ≥ 0, got {sigma}")));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch_matrix(&all);
    let clean = net.forward_batch(&batch).scores().clone();

    let max_delta = |noisy: &Network| -> f64 {
        let out = noisy.forward_batch(&batch);
        let scores = out.scores();
        (0..scores.rows())
            .map(|s| {
                let diff: Vec<f64> = scores.row(s).iter().zip(clean.row(s)).map(|(a, b)| a - b).collect();
                norm2(&diff)
            })
            .fold(0.0, f64::max)
    };

    let mut deltas = Vec::with_capacity(trials);
    for t in 0..trials {
        let z = draw_directions(net, &mut rng_for(seed, t as u64));
        deltas.push(TrialDelta {
            trial: t,
            half_sigma: max_delta(&apply_noise(net, &z, sigma / 2.0)),
            sigma: max_delta(&apply_noise(net, &z, sigma)),
            double_sigma: max_delta(&apply_noise(net, &z, 2.0 * sigma)),
        });
    }

    let at = |f: fn(&TrialDelta) -> f64| deltas.iter().map(f).collect::<Vec<f64>>();
    let base = at(|d| d.sigma);
    let threshold = (r - theta) / 8.0;
    let median = report::quantile(&base, 0.5);
    let median_double_sigma = report::quantile(&at(|d| d.double_sigma), 0.5);
    Ok(PerturbReport {
        sigma,
        trials,
        seed,
        r,
        theta,
        threshold,
        median,
        quantile: report::quantile(&base, 1.0 - PERTURB_DELTA),
        quantile_delta: PERTURB_DELTA,
        max: base.iter().cloned().fold(0.0, f64::max),
        fraction_below_threshold: base.iter().filter(|&&v| v < threshold).count() as f64 / trials as f64,
        median_half_sigma: report::quantile(&at(|d| d.half_sigma), 0.5),
        median_double_sigma,
        slope_ratio: (median > 0.0).then(|| median_double_sigma / median),
        deltas,
    })
}
