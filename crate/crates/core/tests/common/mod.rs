//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric kernels.

#![allow(dead_code)]

use mdnet_core::linalg::{DenseMatrix, DenseVector};
use mdnet_core::margin::{LossConfig, LossKind};
use mdnet_core::{Dataset, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept local so the oracle does not share the library's sampler
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| gaussian(rng)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

pub fn random_vector(dim: usize, rng: &mut ChaCha8Rng) -> DenseVector {
    DenseVector::new((0..dim).map(|_| gaussian(rng)).collect()).unwrap()
}

pub fn random_net(dims: &[usize], rng: &mut ChaCha8Rng) -> Network {
    let weights = dims
        .windows(2)
        .map(|p| {
            let scale = (2.0 / p[0] as f64).sqrt();
            let data = (0..p[0] * p[1]).map(|_| scale * gaussian(rng)).collect();
            DenseMatrix::new(p[1], p[0], data).unwrap()
        })
        .collect();
    Network::new(weights).unwrap()
}

pub fn random_dataset(m: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let features = (0..m).map(|_| random_vector(n, rng)).collect();
    let labels = (0..m).map(|i| i % k).collect();
    Dataset::normalized(features, labels, k).unwrap()
}

pub fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn naive_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Singular values by one-sided (Hestenes) Jacobi rotations.
pub fn jacobi_singular_values(m: &DenseMatrix) -> Vec<f64> {
    let mut a = to_rows(m);
    if m.rows() < m.cols() {
        a = (0..m.cols()).map(|c| (0..m.rows()).map(|r| m.get(r, c)).collect()).collect();
    }
    let rows = a.len();
    let cols = a[0].len();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    alpha += a[r][p] * a[r][p];
                    beta += a[r][q] * a[r][q];
                    gamma += a[r][p] * a[r][q];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in a.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| a[r][c] * a[r][c]).sum::<f64>().sqrt()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Pre-activations `x¹ … x^d` by the plain recursion.
pub fn forward_oracle(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut h = x.to_vec();
    for (l, w) in net.weights().iter().enumerate() {
        if l > 0 {
            h = h.iter().map(|v| v.max(0.0)).collect();
        }
        h = naive_matvec(&to_rows(w), &h);
        out.push(h.clone());
    }
    out
}

pub fn scores_oracle(net: &Network, x: &[f64]) -> Vec<f64> {
    forward_oracle(net, x).pop().unwrap()
}

pub fn margin_oracle(scores: &[f64], y: usize) -> f64 {
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != y)
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    scores[y] - best_other
}

/// Loss value from its defining formula.
pub fn loss_oracle(scores: &[f64], y: usize, cfg: &LossConfig) -> f64 {
    let gamma = margin_oracle(scores, y);
    match cfg.variant {
        LossKind::Mdnet => {
            let (lo, hi) = (cfg.r - cfg.theta, cfg.r + cfg.theta);
            if gamma <= lo {
                ((lo - gamma) / lo).powi(2)
            } else if gamma <= hi {
                0.0
            } else {
                cfg.eta * ((gamma - hi) / hi).powi(2)
            }
        }
        LossKind::Hinge => (cfg.hinge_margin - gamma).max(0.0),
        LossKind::SoftHinge => (1.0 + (cfg.hinge_margin - gamma).exp()).ln(),
        LossKind::CrossEntropy => {
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            z.ln() - scores[y]
        }
    }
}

/// `J^{i,j}` built column by column: push each basis vector of layer `i`'s
/// space through layers `i+1..j` with the sample's ReLU pattern frozen.
pub fn jacobian_oracle(net: &Network, x: &[f64], i: usize, j: usize) -> Vec<Vec<f64>> {
    let pre = forward_oracle(net, x);
    let dim_i = pre[i - 1].len();
    let dim_j = pre[j - 1].len();
    let mut jac = vec![vec![0.0; dim_i]; dim_j];
    for c in 0..dim_i {
        let mut h = vec![0.0; dim_i];
        h[c] = 1.0;
        for l in i + 1..=j {
            let gate = &pre[l - 2];
            let gated: Vec<f64> = h.iter().zip(gate).map(|(v, g)| if *g > 0.0 { *v } else { 0.0 }).collect();
            h = naive_matvec(&to_rows(&net.weights()[l - 1]), &gated);
        }
        for r in 0..dim_j {
            jac[r][c] = h[r];
        }
    }
    jac
}

pub fn frobenius_rows(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Post-activation norm `‖φ(x^{i})‖`, with `φ(x⁰) = x⁰`.
pub fn phi_norm(pre: &[Vec<f64>], x: &[f64], i: usize) -> f64 {
    if i == 0 {
        l2(x)
    } else {
        l2(&pre[i - 1].iter().map(|v| v.max(0.0)).collect::<Vec<_>>())
    }
}

/// Copy of `net` with a single weight moved by `h`.
pub fn nudged(net: &Network, layer: usize, idx: usize, h: f64) -> Network {
    let weights = net
        .weights()
        .iter()
        .enumerate()
        .map(|(l, w)| {
            let mut data = w.as_slice().to_vec();
            if l == layer {
                data[idx] += h;
            }
            DenseMatrix::new(w.rows(), w.cols(), data).unwrap()
        })
        .collect();
    Network::new(weights).unwrap()
}
