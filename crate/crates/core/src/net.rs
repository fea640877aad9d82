//! Bias-free ReLU feed-forward networks.
//!
//! Layers are numbered from 1 as in `x¹ = W₁x`, `xⁱ = Wᵢ φ(xⁱ⁻¹)`. The raw
//! input is not passed through the ReLU, and the output layer is linear.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DenseMatrix>", into = "Vec<DenseMatrix>")]
pub struct Network {
    weights: Vec<DenseMatrix>,
}

impl TryFrom<Vec<DenseMatrix>> for Network {
    type Error = Error;
    fn try_from(weights: Vec<DenseMatrix>) -> Result<Self> {
        Network::new(weights)
    }
}

impl From<Network> for Vec<DenseMatrix> {
    fn from(n: Network) -> Self {
        n.weights
    }
}

impl Network {
    pub fn new(weights: Vec<DenseMatrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight list"));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::DimensionMismatch(format!(
                    "W{} has {} columns but W{} has {} rows",
                    l + 2,
                    pair[1].cols(),
                    l + 1,
                    pair[0].rows()
                )));
            }
        }
        if weights.iter().any(|w| w.rows() == 0 || w.cols() == 0) {
            return Err(Error::Empty("weight matrix"));
        }
        Ok(Self { weights })
    }

    /// Layer count `d`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Widest layer output, `ρ`.
    pub fn rho(&self) -> usize {
        self.weights.iter().map(DenseMatrix::rows).max().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    /// `[n, out₁, …, out_d]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(DenseMatrix::rows))
            .collect()
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    /// `W_layer`, 1-based.
    pub fn layer(&self, layer: usize) -> &DenseMatrix {
        &self.weights[layer - 1]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.weights
    }

    /// Every weight matrix multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w.scaled(c)).collect(),
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.weights[0].matvec_slice(x);
        for w in &self.weights[1..] {
            relu_in_place(&mut h);
            h = w.matvec_slice(&h);
        }
        h
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: &DenseMatrix) -> BatchTrace {
        let mut pre = Vec::with_capacity(self.depth());
        let mut post = Vec::with_capacity(self.depth() - 1);
        pre.push(linalg::matmul_transb(x, &self.weights[0]));
        for w in &self.weights[1..] {
            let mut a = pre[pre.len() - 1].clone();
            relu_in_place(a.as_mut_slice());
            pre.push(linalg::matmul_transb(&a, w));
            post.push(a);
        }
        BatchTrace {
            input: x.clone(),
            pre,
            post,
        }
    }

    /// Sum over the batch of `∂loss/∂Wᵢ` given per-sample score gradients in
    /// the rows of `dscores`.
    pub fn backward_batch(&self, trace: &BatchTrace, dscores: &DenseMatrix) -> GradientSet {
        let d = self.depth();
        let mut grads = vec![DenseMatrix::zeros(0, 0); d];
        let mut delta = dscores.clone();
        for l in (0..d).rev() {
            let act = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            grads[l] = linalg::matmul_transa(&delta, act);
            if l > 0 {
                let mut back = linalg::matmul_unchecked(&delta, &self.weights[l]);
                for (g, &p) in back.as_mut_slice().iter_mut().zip(trace.pre[l - 1].as_slice()) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = back;
            }
        }
        GradientSet { grads }
    }
}

#[inline]
fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

/// Activations of a batch, one sample per row.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub input: DenseMatrix,
    /// `x¹ … x^d`
    pub pre: Vec<DenseMatrix>,
    /// `φ(x¹) … φ(x^{d−1})`
    pub post: Vec<DenseMatrix>,
}

impl BatchTrace {
    pub fn scores(&self) -> &DenseMatrix {
        &self.pre[self.pre.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: DenseVector,
    /// `x¹ … x^d`
    pub preacts: Vec<DenseVector>,
    /// `φ(x¹) … φ(x^{d−1})`
    pub postacts: Vec<DenseVector>,
    /// `masks[i−1][u]` is true iff unit `u` of `xⁱ` is strictly positive.
    pub masks: Vec<Vec<bool>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.preacts.len()
    }

    pub fn scores(&self) -> &DenseVector {
        &self.preacts[self.preacts.len() - 1]
    }

    /// `xⁱ` for `0 ≤ i ≤ d`, with `x⁰` the input.
    pub fn x(&self, i: usize) -> &DenseVector {
        if i == 0 {
            &self.input
        } else {
            &self.preacts[i - 1]
        }
    }

    /// `φ(xⁱ)` for `0 ≤ i < d`, with `φ(x⁰) = x⁰`.
    pub fn phi(&self, i: usize) -> &DenseVector {
        if i == 0 {
            &self.input
        } else {
            &self.postacts[i - 1]
        }
    }
}

pub fn forward(net: &Network, x: &DenseVector) -> Result<ForwardTrace> {
    if x.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has dim {}, network expects {}",
            x.dim(),
            net.input_dim()
        )));
    }
    let d = net.depth();
    let mut preacts = Vec::with_capacity(d);
    let mut postacts = Vec::with_capacity(d.saturating_sub(1));
    let mut masks = Vec::with_capacity(d.saturating_sub(1));
    let mut h = net.weights[0].matvec_slice(x.as_slice());
    for w in &net.weights[1..] {
        let mask: Vec<bool> = h.iter().map(|&v| v > 0.0).collect();
        let mut a = h.clone();
        relu_in_place(&mut a);
        let next = w.matvec_slice(&a);
        preacts.push(DenseVector::from_vec_unchecked(h));
        postacts.push(DenseVector::from_vec_unchecked(a));
        masks.push(mask);
        h = next;
    }
    preacts.push(DenseVector::from_vec_unchecked(h));
    Ok(ForwardTrace {
        input: x.clone(),
        preacts,
        postacts,
        masks,
    })
}

/// Jacobian of the map `xⁱ ↦ xʲ` at the trace's activation pattern:
/// `W_j D_{j−1} W_{j−1} ⋯ W_{i+1} D_i`, and the identity when `i = j`.
pub fn jacobian_between(net: &Network, trace: &ForwardTrace, i: usize, j: usize) -> Result<DenseMatrix> {
    let d = net.depth();
    if i == 0 || i > j || j > d || trace.depth() != d {
        return Err(Error::InvalidLayers { i, j, depth: d });
    }
    if i == j {
        return Ok(DenseMatrix::identity(net.layer(i).rows()));
    }
    let mut jac = net.layer(j).clone();
    mask_columns(&mut jac, &trace.masks[j - 2]);
    for l in (i + 1..j).rev() {
        jac = linalg::matmul_unchecked(&jac, net.layer(l));
        mask_columns(&mut jac, &trace.masks[l - 2]);
    }
    Ok(jac)
}

fn mask_columns(m: &mut DenseMatrix, mask: &[bool]) {
    for r in 0..m.rows() {
        for (v, &on) in m.row_mut(r).iter_mut().zip(mask) {
            if !on {
                *v = 0.0;
            }
        }
    }
}

/// Per-layer `∂loss/∂Wᵢ`, shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<DenseMatrix>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            grads: net
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }
}

pub fn backward(net: &Network, trace: &ForwardTrace, dscores: &DenseVector) -> Result<GradientSet> {
    if dscores.dim() != net.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "score gradient has dim {}, network outputs {}",
            dscores.dim(),
            net.output_dim()
        )));
    }
    let d = net.depth();
    let mut grads = vec![DenseMatrix::zeros(0, 0); d];
    let mut delta = dscores.as_slice().to_vec();
    for l in (1..=d).rev() {
        let act = trace.phi(l - 1).as_slice();
        let mut g = Vec::with_capacity(delta.len() * act.len());
        for &dv in &delta {
            g.extend(act.iter().map(|a| dv * a));
        }
        grads[l - 1] = DenseMatrix::from_vec_unchecked(delta.len(), act.len(), g);
        if l > 1 {
            let mut back = net.layer(l).matvec_t_slice(&delta);
            for (b, &on) in back.iter_mut().zip(&trace.masks[l - 2]) {
                if !on {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    Ok(GradientSet { grads })
}

/// He-style Gaussian initialisation, std `√(2/fan_in)`.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<Network> {
    if layer_dims.len() < 2 {
        return Err(Error::Empty("layer dims (need input and at least one layer)"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidArgument("layer dims must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = layer_dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            DenseMatrix::from_vec_unchecked(fan_out, fan_in, data)
        })
        .collect();
    Network::new(weights)
}
