//! Capacity terms of norm-based generalization bounds and the margin-ratio
//! capacity, with every hidden constant set to 1.
//!
//! Products of per-layer norms are accumulated as sums of logarithms and
//! exponentiated once; a result that overflows is reported as `+∞`.

use serde::{Deserialize, Serialize};

use crate::cushion::CushionProfile;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{matrix_norm_along, norm2, NormAxis, NormKind};
use crate::margin::MarginStats;
use crate::net::Network;
use crate::report::{self, float};

/// Floor applied to the reference margin so prior bounds stay defined.
pub const GAMMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_PERCENTILE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "p")]
pub enum MarginPolicy {
    Minimum,
    /// Percentile in `[0, 100]`.
    Percentile(f64),
}

impl Default for MarginPolicy {
    fn default() -> Self {
        MarginPolicy::Percentile(DEFAULT_PERCENTILE)
    }
}

/// Scalar margin surrogate `γ` for the prior bounds, floored at
/// [`GAMMA_FLOOR`].
pub fn reference_margin(margins: &[f64], policy: MarginPolicy) -> Result<f64> {
    if margins.is_empty() {
        return Err(Error::Empty("margin list"));
    }
    let raw = match policy {
        MarginPolicy::Minimum => margins.iter().cloned().fold(f64::INFINITY, f64::min),
        MarginPolicy::Percentile(p) => {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
            }
            report::quantile(margins, p / 100.0)
        }
    };
    Ok(raw.max(GAMMA_FLOOR))
}

/// Norms of one weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub two_one: f64,
    pub one_two: f64,
    pub one_inf: f64,
}

pub fn layer_norms(net: &Network, axis: NormAxis) -> Result<Vec<LayerNorms>> {
    net.weights()
        .iter()
        .map(|w| {
            Ok(LayerNorms {
                spectral: matrix_norm_along(w, NormKind::Spectral, axis)?,
                frobenius: matrix_norm_along(w, NormKind::Frobenius, axis)?,
                two_one: matrix_norm_along(w, NormKind::TwoOne, axis)?,
                one_two: matrix_norm_along(w, NormKind::OneTwo, axis)?,
                one_inf: matrix_norm_along(w, NormKind::OneInf, axis)?,
            })
        })
        .collect()
}

/// `exp(Σ log terms)`, `+∞` on overflow, `0` if any factor is zero.
fn log_product(factors: impl IntoIterator<Item = f64>) -> f64 {
    let mut log_sum = 0.0;
    for f in factors {
        if f == 0.0 {
            return 0.0;
        }
        log_sum += f.ln();
    }
    log_sum.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorTerms {
    /// `(1/γ²) ∏ ‖Wᵢ‖_{1,∞}`
    #[serde(with = "float")]
    pub l1_inf: f64,
    /// `(1/γ²) ∏ ‖Wᵢ‖_F²`
    #[serde(with = "float")]
    pub frobenius: f64,
    /// `(1/γ²) ∏ ‖Wᵢ‖₂² · Σ ‖Wᵢ‖_{1,2}² / ‖Wᵢ‖₂²`
    #[serde(with = "float")]
    pub spec_l12: f64,
    /// `(ρ/γ²) ∏ ‖Wᵢ‖₂² · Σ ‖Wᵢ‖_F² / ‖Wᵢ‖₂²`
    #[serde(with = "float")]
    pub spec_fro: f64,
    /// `(max_x ‖f(x)‖² / γ²) Σ 1/(μᵢ² μᵢ→²)`
    #[serde(with = "float")]
    pub compression: f64,
    /// `(∏ ‖Wᵢ‖₂) (Σ ‖Wᵢ‖_{2,1}^{2/3} / ‖Wᵢ‖₂^{2/3})^{3/2}`
    #[serde(with = "float")]
    pub r_bartlett: f64,
    /// `√ρ d (∏ ‖Wᵢ‖₂) (Σ ‖Wᵢ‖_F² / ‖Wᵢ‖₂²)^{1/2}`
    #[serde(with = "float")]
    pub r_neyshabur: f64,
}

pub fn prior_bound_terms(
    net: &Network,
    data: &Dataset,
    gamma_ref: f64,
    cushions: &CushionProfile,
    axis: NormAxis,
) -> Result<PriorTerms> {
    if !(gamma_ref > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma_ref must be positive, got {gamma_ref}")));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if cushions.depth != net.depth() {
        return Err(Error::DimensionMismatch(format!(
            "cushion profile has {} layers, network has {}",
            cushions.depth,
            net.depth()
        )));
    }
    let norms = layer_norms(net, axis)?;
    Ok(prior_terms_from(net, data, gamma_ref, cushions, &norms))
}

fn prior_terms_from(
    net: &Network,
    data: &Dataset,
    gamma: f64,
    cushions: &CushionProfile,
    norms: &[LayerNorms],
) -> PriorTerms {
    let g2 = gamma * gamma;
    let rho = net.rho() as f64;
    let d = net.depth() as f64;

    let spec_sq_prod = log_product(norms.iter().map(|n| n.spectral * n.spectral));
    let spec_prod = log_product(norms.iter().map(|n| n.spectral));
    let ratio_sum = |f: &dyn Fn(&LayerNorms) -> f64| norms.iter().map(f).sum::<f64>();

    let l12_sum = ratio_sum(&|n| (n.one_two * n.one_two) / (n.spectral * n.spectral));
    let fro_sum = ratio_sum(&|n| (n.frobenius * n.frobenius) / (n.spectral * n.spectral));
    let bartlett_sum = ratio_sum(&|n| (n.two_one / n.spectral).powf(2.0 / 3.0));

    let max_out_sq = data
        .features()
        .iter()
        .map(|x| {
            let s = norm2(&net.scores(x.as_slice()));
            s * s
        })
        .fold(0.0, f64::max);

    PriorTerms {
        l1_inf: log_product(norms.iter().map(|n| n.one_inf)) / g2,
        frobenius: log_product(norms.iter().map(|n| n.frobenius * n.frobenius)) / g2,
        spec_l12: spec_sq_prod * l12_sum / g2,
        spec_fro: rho * spec_sq_prod * fro_sum / g2,
        compression: max_out_sq / g2 * cushions.resilience_sum(),
        r_bartlett: spec_prod * bartlett_sum.powf(1.5),
        r_neyshabur: rho.sqrt() * d * spec_prod * fro_sum.sqrt(),
    }
}

/// Margin-ratio capacity in both published forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    /// `Λ = ((1+λ)/(1−λ)) (Σ c²d / (μᵢ² μᵢ→²))^{1/2}`
    #[serde(with = "float")]
    pub theorem_form: f64,
    /// `((1+λ)/(1−λ))² Σ 1/(μᵢ² μᵢ→²)`
    #[serde(with = "float")]
    pub figure_form: f64,
}

pub fn mdnet_capacity(lambda: f64, c: f64, d: usize, cushions: &CushionProfile) -> Result<Capacity> {
    if !(lambda >= 0.0) || lambda >= 1.0 {
        return Err(Error::InvalidRatio(lambda));
    }
    if cushions.mu.len() != d || cushions.mu_min().len() != d {
        return Err(Error::DimensionMismatch(format!(
            "cushion profile has {} layers, expected {d}",
            cushions.mu.len()
        )));
    }
    let ratio = (1.0 + lambda) / (1.0 - lambda);
    let sum = cushions.resilience_sum();
    Ok(Capacity {
        theorem_form: ratio * (c * c * d as f64 * sum).sqrt(),
        figure_form: ratio * ratio * sum,
    })
}

/// `√((Λ² + ln(d·m/δ)) / m)`.
pub fn theorem1_gap(capacity_sq: f64, d: usize, m: usize, delta: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need m ≥ 2, got {m}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 < delta ≤ 1, got {delta}")));
    }
    if d == 0 || !(capacity_sq >= 0.0) {
        return Err(Error::InvalidArgument("need d ≥ 1 and a non-negative capacity".into()));
    }
    let m = m as f64;
    Ok(((capacity_sq + (d as f64 * m / delta).ln()) / m).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub policy: MarginPolicy,
    pub delta: f64,
    pub axis: NormAxis,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            policy: MarginPolicy::default(),
            delta: DEFAULT_DELTA,
            axis: NormAxis::Columns,
        }
    }
}

/// Quantities the report was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(with = "float")]
    pub lambda: f64,
    pub r: f64,
    pub theta: f64,
    #[serde(with = "float")]
    pub c: f64,
    pub d: usize,
    pub m: usize,
    pub rho: usize,
    pub delta: f64,
    pub norm_bound_b: f64,
    pub mu: Vec<f64>,
    pub mu_min: Vec<f64>,
    pub layer_norms: Vec<LayerNorms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma_ref: f64,
    pub gamma_policy: MarginPolicy,
    pub terms: PriorTerms,
    /// `None` when `λ ≥ 1` or the cushions are degenerate.
    pub capacity: Option<Capacity>,
    /// Gap from the theorem-form capacity; `None` when the capacity is.
    #[serde(with = "float::option")]
    pub theorem1_gap: Option<f64>,
    pub mdnet_valid: bool,
    pub inputs: BoundInputs,
    pub hidden_constant: f64,
    /// `ρ²d²`, reported for scale only.
    pub vc_dimension_term: f64,
}

impl BoundReport {
    /// Figure-form ratio term, `+∞` when invalid.
    pub fn mdnet_ratio(&self) -> f64 {
        self.capacity.map_or(f64::INFINITY, |c| c.figure_form)
    }
}

/// Full report for one trained network over its training set.
pub fn bound_report(
    net: &Network,
    data: &Dataset,
    stats: &MarginStats,
    cushions: &CushionProfile,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    let gamma_ref = reference_margin(&stats.margins, cfg.policy)?;
    let norms = layer_norms(net, cfg.axis)?;
    if cushions.depth != net.depth() {
        return Err(Error::DimensionMismatch("cushion profile does not match network".into()));
    }
    let terms = prior_terms_from(net, data, gamma_ref, cushions, &norms);
    let d = net.depth();
    let c = cushions.contraction_c();
    let capacity = if stats.is_valid() && !cushions.is_degenerate() && c.is_finite() {
        mdnet_capacity(stats.ratio_lambda, c, d, cushions).ok()
    } else {
        None
    };
    let theorem1_gap = match capacity {
        Some(cap) if cap.theorem_form.is_finite() => {
            Some(theorem1_gap(cap.theorem_form * cap.theorem_form, d, data.len().max(2), cfg.delta)?)
        }
        _ => None,
    };
    if capacity.is_none() {
        log::warn!(
            "margin-ratio terms invalid: lambda = {}, degenerate cushions = {}",
            stats.ratio_lambda,
            cushions.is_degenerate()
        );
    }
    let rho = net.rho();
    Ok(BoundReport {
        gamma_ref,
        gamma_policy: cfg.policy,
        terms,
        capacity,
        theorem1_gap,
        mdnet_valid: capacity.is_some(),
        inputs: BoundInputs {
            lambda: stats.ratio_lambda,
            r: stats.mean_r,
            theta: stats.theta(),
            c,
            d,
            m: data.len(),
            rho,
            delta: cfg.delta,
            norm_bound_b: data.norm_bound(),
            mu: cushions.mu_values(),
            mu_min: cushions.mu_min().to_vec(),
            layer_norms: norms,
        },
        hidden_constant: 1.0,
        vc_dimension_term: (rho * rho * d * d) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cushion::{estimate_cushions, InterlayerDenominator};
    use crate::linalg::{DenseMatrix, DenseVector};

    fn identity_setup() -> (Network, Dataset, CushionProfile) {
        let net = Network::new(vec![DenseMatrix::identity(2)]).unwrap();
        let data = Dataset::new(
            vec![DenseVector::new(vec![1.0, 0.0]).unwrap(), DenseVector::new(vec![0.0, 1.0]).unwrap()],
            vec![0, 1],
            2,
            1.0,
        )
        .unwrap();
        let p = estimate_cushions(&net, &data, InterlayerDenominator::PreviousActivation).unwrap();
        (net, data, p)
    }

    #[test]
    fn reference_margin_policies() {
        assert_eq!(reference_margin(&[1.0, 2.0, 3.0], MarginPolicy::Minimum).unwrap(), 1.0);
        assert_eq!(reference_margin(&[-1.0, 2.0], MarginPolicy::Minimum).unwrap(), GAMMA_FLOOR);
        assert_eq!(reference_margin(&[1.0, 2.0, 3.0], MarginPolicy::Percentile(50.0)).unwrap(), 2.0);
        assert!(reference_margin(&[], MarginPolicy::Minimum).is_err());
        assert!(reference_margin(&[1.0], MarginPolicy::Percentile(101.0)).is_err());
    }

    #[test]
    fn identity_terms() {
        let (net, data, p) = identity_setup();
        let t = prior_bound_terms(&net, &data, 1.0, &p, NormAxis::Columns).unwrap();
        assert!((t.frobenius - 2.0).abs() < 1e-12);
        assert!((t.l1_inf - 1.0).abs() < 1e-12);
        assert!((t.spec_l12 - 2.0).abs() < 1e-12);
        assert!(prior_bound_terms(&net, &data, 0.0, &p, NormAxis::Columns).is_err());
    }

    #[test]
    fn capacity_by_hand() {
        let (_, _, mut p) = identity_setup();
        p.mu[0].value = 1.0;
        p.interlayer.mu_min[0] = 1.0;
        let c = mdnet_capacity(0.0, 1.0, 1, &p).unwrap();
        assert_eq!(c.theorem_form, 1.0);
        assert_eq!(c.figure_form, 1.0);
        let c = mdnet_capacity(0.5, 1.0, 1, &p).unwrap();
        assert!((c.theorem_form - 3.0).abs() < 1e-15);
        assert!((c.figure_form - 9.0).abs() < 1e-15);
        assert!(matches!(mdnet_capacity(1.0, 1.0, 1, &p), Err(Error::InvalidRatio(_))));
        assert!(mdnet_capacity(0.5, 1.0, 2, &p).is_err());
    }

    #[test]
    fn gap_arithmetic() {
        let g = theorem1_gap(3.0, 1, 100, 1.0).unwrap();
        assert!((g - ((3.0 + 100f64.ln()) / 100.0).sqrt()).abs() < 1e-15);
        assert!((g - 0.27578).abs() < 1e-5);
        assert!(theorem1_gap(3.0, 1, 1, 0.5).is_err());
        assert!(theorem1_gap(3.0, 1, 10, 0.0).is_err());
        assert!(theorem1_gap(3.0, 1, 200, 0.1).unwrap() < theorem1_gap(3.0, 1, 100, 0.1).unwrap());
        assert!(theorem1_gap(4.0, 1, 100, 0.1).unwrap() > theorem1_gap(3.0, 1, 100, 0.1).unwrap());
    }

    #[test]
    fn log_product_overflow_and_zero() {
        assert!(log_product([1e200, 1e200]).is_infinite());
        assert_eq!(log_product([1e200, 0.0]), 0.0);
    }
}
