//! Data-dependent noise-sensitivity parameters of a trained network.
//!
//! All quantities are extrema of per-sample norm ratios over a dataset:
//!
//! - layer cushion `μᵢ = min_x ‖xⁱ‖ / (‖Wᵢ‖_F ‖φ(xⁱ⁻¹)‖)`
//! - interlayer cushion `μᵢⱼ = min_x ‖xʲ‖ / (‖Jⁱʲ‖_F ‖φ(xⁱ⁻¹)‖)`, with
//!   `Jⁱⁱ = I`
//! - minimal interlayer cushion `μᵢ→ = min(1/√ρ, min_{j≥i} μᵢⱼ)`
//! - activation contraction `c = max_{x, i<d} ‖xⁱ‖ / ‖φ(xⁱ)‖`
//!
//! Samples with a zero denominator are skipped and counted. Ties between
//! witnesses go to the lowest sample index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, norm2, DenseMatrix};
use crate::net::{self, ForwardTrace, Network};
use crate::report;

/// Failure probability used for the smoothness quantile.
pub const SMOOTHNESS_DELTA: f64 = 0.5;

/// Which norm sits next to `‖Jⁱʲ‖_F` in the interlayer-cushion denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterlayerDenominator {
    /// `‖φ(xⁱ⁻¹)‖`
    #[default]
    PreviousActivation,
    /// `‖xⁱ‖`
    LayerOutput,
}

/// An extremum together with the sample that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    #[serde(with = "report::float")]
    pub value: f64,
    pub witness: Option<usize>,
    pub skipped: usize,
}

impl Extremum {
    fn min_start() -> Self {
        Self {
            value: f64::INFINITY,
            witness: None,
            skipped: 0,
        }
    }

    fn offer_min(&mut self, v: f64, sample: usize) {
        if v < self.value {
            self.value = v;
            self.witness = Some(sample);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    #[serde(with = "report::float")]
    pub value: f64,
    /// `(sample, layer)` attaining the maximum.
    pub witness: Option<(usize, usize)>,
    pub skipped: usize,
    /// Some layer output was entirely non-positive while nonzero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlayerTable {
    /// `entries[i−1][j−i]` holds `μᵢⱼ` for `i ≤ j ≤ d`.
    pub entries: Vec<Vec<Extremum>>,
    /// `μᵢ→`, capped at `1/√ρ`.
    pub mu_min: Vec<f64>,
}

impl InterlayerTable {
    pub fn get(&self, i: usize, j: usize) -> &Extremum {
        &self.entries[i - 1][j - i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// `ρ̂_δ`; `+∞` when the linearisation error vanishes at the quantile.
    #[serde(with = "report::float")]
    pub rho_delta: f64,
    pub delta: f64,
    pub quantile_value: f64,
    pub observations: usize,
    pub skipped: usize,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CushionProfile {
    pub depth: usize,
    pub rho: usize,
    pub mu: Vec<Extremum>,
    pub interlayer: InterlayerTable,
    pub contraction: Contraction,
    pub smoothness: Option<SmoothnessEstimate>,
    pub denominator: InterlayerDenominator,
    pub samples: usize,
}

impl CushionProfile {
    pub fn mu_values(&self) -> Vec<f64> {
        self.mu.iter().map(|e| e.value).collect()
    }

    pub fn mu_min(&self) -> &[f64] {
        &self.interlayer.mu_min
    }

    pub fn contraction_c(&self) -> f64 {
        self.contraction.value
    }

    /// `Σᵢ 1/(μᵢ² μᵢ→²)`.
    pub fn resilience_sum(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.interlayer.mu_min)
            .map(|(m, mm)| 1.0 / (m.value * m.value * mm * mm))
            .sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.contraction.degenerate
            || self.mu.iter().any(|m| !(m.value > 0.0))
            || self.interlayer.mu_min.iter().any(|m| !(*m > 0.0))
    }
}

fn traces(net: &Network, data: &Dataset) -> Result<Vec<ForwardTrace>> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    data.features().iter().map(|x| net::forward(net, x)).collect()
}

/// `μᵢ` for every layer.
pub fn layer_cushions(net: &Network, data: &Dataset) -> Result<Vec<Extremum>> {
    layer_cushions_from(net, &traces(net, data)?)
}

fn layer_cushions_from(net: &Network, traces: &[ForwardTrace]) -> Result<Vec<Extremum>> {
    let mut out = Vec::with_capacity(net.depth());
    for i in 1..=net.depth() {
        let fro = net.layer(i).frobenius_sq().sqrt();
        let mut ext = Extremum::min_start();
        for (s, t) in traces.iter().enumerate() {
            let denom = fro * t.phi(i - 1).norm();
            if denom == 0.0 {
                ext.skipped += 1;
                continue;
            }
            ext.offer_min(t.x(i).norm() / denom, s);
        }
        if ext.witness.is_none() {
            return Err(Error::AllSkipped { layer: i });
        }
        if ext.skipped > 0 {
            log::warn!("layer cushion {i}: skipped {} zero-norm samples", ext.skipped);
        }
        out.push(ext);
    }
    Ok(out)
}

/// `μᵢⱼ` for all `i ≤ j` and the capped minima `μᵢ→`.
pub fn interlayer_cushions(net: &Network, data: &Dataset, denominator: InterlayerDenominator) -> Result<InterlayerTable> {
    interlayer_from(net, &traces(net, data)?, denominator)
}

fn interlayer_from(net: &Network, traces: &[ForwardTrace], denominator: InterlayerDenominator) -> Result<InterlayerTable> {
    let d = net.depth();
    let mut entries: Vec<Vec<Extremum>> = (1..=d).map(|i| vec![Extremum::min_start(); d - i + 1]).collect();

    for (s, t) in traces.iter().enumerate() {
        let side = |i: usize| match denominator {
            InterlayerDenominator::PreviousActivation => t.phi(i - 1).norm(),
            InterlayerDenominator::LayerOutput => t.x(i).norm(),
        };
        for j in 1..=d {
            let xj = t.x(j).norm();
            // i = j: identity Jacobian
            let denom = (net.layer(j).rows() as f64).sqrt() * side(j);
            offer(&mut entries[j - 1][0], xj, denom, s);
            // i < j: J^{i,j} built right-to-left from J^{i+1,j}
            let mut jac: Option<DenseMatrix> = None;
            for i in (1..j).rev() {
                let next = match jac.take() {
                    None => net.layer(j).clone(),
                    Some(prev) => linalg::matmul_unchecked(&prev, net.layer(i + 1)),
                };
                let next = masked_columns(next, &t.masks[i - 1]);
                let denom = next.frobenius_sq().sqrt() * side(i);
                offer(&mut entries[i - 1][j - i], xj, denom, s);
                jac = Some(next);
            }
        }
    }

    for (i, row) in entries.iter().enumerate() {
        for (off, e) in row.iter().enumerate() {
            if e.witness.is_none() {
                return Err(Error::AllSkipped { layer: i + 1 + off });
            }
        }
    }
    let cap = 1.0 / (net.rho() as f64).sqrt();
    let mu_min = entries
        .iter()
        .map(|row| row.iter().map(|e| e.value).fold(cap, f64::min))
        .collect();
    Ok(InterlayerTable { entries, mu_min })
}

fn offer(e: &mut Extremum, num: f64, denom: f64, sample: usize) {
    if denom == 0.0 {
        e.skipped += 1;
    } else {
        e.offer_min(num / denom, sample);
    }
}

fn masked_columns(mut m: DenseMatrix, mask: &[bool]) -> DenseMatrix {
    for r in 0..m.rows() {
        for (v, &on) in m.row_mut(r).iter_mut().zip(mask) {
            if !on {
                *v = 0.0;
            }
        }
    }
    m
}

/// Activation contraction `c ≥ 1`.
pub fn activation_contraction(net: &Network, data: &Dataset) -> Result<Contraction> {
    Ok(contraction_from(net, &traces(net, data)?))
}

fn contraction_from(net: &Network, traces: &[ForwardTrace]) -> Contraction {
    let mut out = Contraction {
        value: 1.0,
        witness: None,
        skipped: 0,
        degenerate: false,
    };
    for (s, t) in traces.iter().enumerate() {
        for i in 1..net.depth() {
            let (pre, post) = (t.x(i).norm(), t.phi(i).norm());
            let ratio = if post > 0.0 {
                pre / post
            } else if pre > 0.0 {
                out.degenerate = true;
                f64::INFINITY
            } else {
                out.skipped += 1;
                continue;
            };
            if ratio > out.value || (out.witness.is_none() && ratio >= out.value) {
                out.value = ratio;
                out.witness = Some((s, i));
            }
        }
    }
    if out.degenerate {
        log::warn!("activation contraction is infinite: a layer output is entirely non-positive");
    }
    out
}

/// Monte-Carlo estimate of the interlayer smoothness `ρ̂_δ` at `δ = 1/2`.
///
/// For each sample, each pair `i < j` and each trial, `η` is drawn in a
/// uniformly random direction with `‖η‖ = σ‖xⁱ‖`, and the observation is
/// `‖Mⁱʲ(xⁱ+η) − Jⁱʲ(xⁱ+η)‖ ‖xⁱ‖ / (‖η‖ ‖xʲ‖)`. The estimate is the
/// reciprocal of the `(1−δ)`-quantile of all observations. Each sample uses
/// its own RNG stream derived from `seed`.
pub fn interlayer_smoothness(net: &Network, data: &Dataset, sigma: f64, trials: usize, seed: u64) -> Result<SmoothnessEstimate> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be ≥ 1".into()));
    }
    let traces = traces(net, data)?;
    let d = net.depth();
    let mut observations = Vec::new();
    let mut skipped = 0;
    for (s, t) in traces.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        for i in 1..d {
            let xi = t.x(i).as_slice();
            let xi_norm = norm2(xi);
            for j in i + 1..=d {
                let xj_norm = t.x(j).norm();
                for _ in 0..trials {
                    let z: Vec<f64> = (0..xi.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                    if xi_norm == 0.0 || xj_norm == 0.0 {
                        skipped += 1;
                        continue;
                    }
                    let scale = sigma * xi_norm / norm2(&z);
                    let shifted: Vec<f64> = xi.iter().zip(&z).map(|(x, zz)| x + zz * scale).collect();
                    let nonlinear = propagate(net, t, &shifted, i, j, false);
                    let linear = propagate(net, t, &shifted, i, j, true);
                    let gap: Vec<f64> = nonlinear.iter().zip(&linear).map(|(a, b)| a - b).collect();
                    // ‖η‖ = σ‖xⁱ‖, so the ratio reduces to ‖gap‖ / (σ‖xʲ‖)
                    observations.push(norm2(&gap) / (sigma * xj_norm));
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("interlayer smoothness: skipped {skipped} draws with zero-norm layers");
    }
    if observations.is_empty() {
        return Err(Error::Empty("smoothness observations (network has a single layer or all skipped)"));
    }
    let q = report::quantile(&observations, 1.0 - SMOOTHNESS_DELTA);
    Ok(SmoothnessEstimate {
        rho_delta: if q > 0.0 { 1.0 / q } else { f64::INFINITY },
        delta: SMOOTHNESS_DELTA,
        quantile_value: q,
        observations: observations.len(),
        skipped,
        sigma,
        trials,
        seed,
    })
}

/// Pushes a layer-`i` pre-activation to layer `j`, either through the real
/// ReLUs or through the trace's fixed activation pattern.
fn propagate(net: &Network, t: &ForwardTrace, start: &[f64], i: usize, j: usize, frozen: bool) -> Vec<f64> {
    let mut h = start.to_vec();
    for l in i + 1..=j {
        let mask = &t.masks[l - 2];
        for (v, &on) in h.iter_mut().zip(mask) {
            let keep = if frozen { on } else { *v > 0.0 };
            if !keep {
                *v = 0.0;
            }
        }
        h = net.layer(l).matvec_slice(&h);
    }
    h
}

/// Layer cushions, interlayer table and activation contraction in one pass
/// over the forward traces.
pub fn estimate_cushions(net: &Network, data: &Dataset, denominator: InterlayerDenominator) -> Result<CushionProfile> {
    let traces = traces(net, data)?;
    Ok(CushionProfile {
        depth: net.depth(),
        rho: net.rho(),
        mu: layer_cushions_from(net, &traces)?,
        interlayer: interlayer_from(net, &traces, denominator)?,
        contraction: contraction_from(net, &traces),
        smoothness: None,
        denominator,
        samples: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseVector;

    fn data(points: &[&[f64]], labels: &[usize]) -> Dataset {
        let f = points.iter().map(|p| DenseVector::new(p.to_vec()).unwrap()).collect();
        Dataset::normalized(f, labels.to_vec(), 2).unwrap()
    }

    #[test]
    fn identity_net_cushions() {
        let net = Network::new(vec![DenseMatrix::identity(4)]).unwrap();
        let d = data(&[&[1.0, 2.0, 0.0, -1.0], &[0.5, 0.5, 0.5, 0.5]], &[0, 1]);
        let p = estimate_cushions(&net, &d, InterlayerDenominator::PreviousActivation).unwrap();
        assert!((p.mu[0].value - 0.5).abs() < 1e-15);
        assert!((p.interlayer.get(1, 1).value - 0.5).abs() < 1e-15);
        assert!((p.mu_min()[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.contraction_c(), 1.0);
    }

    #[test]
    fn scale_cancels() {
        let net = crate::net::init_params(&[3, 5, 2], 4).unwrap();
        let d = data(&[&[1.0, 0.2, -0.3], &[-0.4, 0.9, 0.1], &[0.3, 0.3, 0.3]], &[0, 1, 0]);
        let a = layer_cushions(&net, &d).unwrap();
        let b = layer_cushions(&net.scaled(3.0), &d).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.value - y.value).abs() <= 1e-12 * x.value);
        }
    }

    #[test]
    fn contraction_by_hand() {
        // x¹ = (1, −1): ‖x¹‖ = √2, ‖φ(x¹)‖ = 1
        let net = Network::new(vec![
            DenseMatrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        ])
        .unwrap();
        let d = Dataset::new(vec![DenseVector::new(vec![1.0]).unwrap()], vec![0], 2, 1.0).unwrap();
        let c = activation_contraction(&net, &d).unwrap();
        assert!((c.value - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.witness, Some((0, 1)));
    }

    #[test]
    fn dead_layer_is_degenerate() {
        let net = Network::new(vec![
            DenseMatrix::from_rows(&[vec![-1.0], vec![-2.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
        ])
        .unwrap();
        let d = Dataset::new(vec![DenseVector::new(vec![1.0]).unwrap()], vec![0], 2, 1.0).unwrap();
        let c = activation_contraction(&net, &d).unwrap();
        assert!(c.value.is_infinite() && c.degenerate);
        // φ(x¹) = 0 means every layer-2 denominator vanishes
        assert!(matches!(layer_cushions(&net, &d), Err(Error::AllSkipped { layer: 2 })));
    }

    #[test]
    fn smoothness_linear_regime_is_infinite() {
        // all pre-activations far from zero: tiny noise never flips a unit
        let net = Network::new(vec![
            DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
        ])
        .unwrap();
        let d = Dataset::new(vec![DenseVector::new(vec![1.0]).unwrap()], vec![0], 2, 1.0).unwrap();
        let s = interlayer_smoothness(&net, &d, 1e-3, 20, 5).unwrap();
        assert!(s.rho_delta.is_infinite());
        assert_eq!(s.quantile_value, 0.0);
        assert!(interlayer_smoothness(&net, &d, 0.0, 20, 5).is_err());
        assert!(interlayer_smoothness(&net, &d, 1e-3, 0, 5).is_err());
    }
}
