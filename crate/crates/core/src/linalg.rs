//! Dense row-major matrices and vectors, plus the matrix norms used by the
//! capacity terms.
//!
//! Every product goes through [`dot`] so that batched and per-sample forward
//! passes produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner product with four interleaved accumulators.
///
/// The summation order depends only on the slice length, so results are
/// reproducible across call sites.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Unit basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self::new(n, n, data)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `self · x` for a raw slice.
    pub fn matvec_slice(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y` for a raw slice.
    pub fn matvec_t_slice(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix times vector of dim {}",
                self.rows,
                self.cols,
                x.dim()
            )));
        }
        Ok(DenseVector(self.matvec_slice(x.as_slice())))
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

/// Standard product `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let out = matmul_unchecked(a, b);
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matmul result"));
    }
    Ok(out)
}

pub(crate) fn matmul_unchecked(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    out
}

/// `a · bᵀ`; each entry is a [`dot`] of two rows.
pub(crate) fn matmul_transb(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    debug_assert_eq!(a.cols, b.cols);
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            data.push(dot(ai, b.row(j)));
        }
    }
    DenseMatrix::from_vec_unchecked(a.rows, b.rows, data)
}

/// `aᵀ · b`, accumulated sample by sample in row order.
pub(crate) fn matmul_transa(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    debug_assert_eq!(a.rows, b.rows);
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    for s in 0..a.rows {
        let bs = b.row(s);
        for (o, &aso) in a.row(s).iter().enumerate() {
            if aso != 0.0 {
                axpy(aso, bs, out.row_mut(o));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Spectral,
    Frobenius,
    /// Sum over groups of the group ℓ2 norm.
    TwoOne,
    /// ℓ2 norm of the vector of group ℓ1 norms.
    OneTwo,
    /// Largest row ℓ1 norm.
    OneInf,
}

/// Which axis forms a "unit" for the grouped norms. `Columns` treats each
/// column (one input neuron's fan-out) as a group; `Rows` transposes first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    #[default]
    Columns,
    Rows,
}

pub fn matrix_norm(m: &DenseMatrix, kind: NormKind) -> Result<f64> {
    matrix_norm_along(m, kind, NormAxis::Columns)
}

pub fn matrix_norm_along(m: &DenseMatrix, kind: NormKind, axis: NormAxis) -> Result<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Empty("matrix"));
    }
    if axis == NormAxis::Rows && matches!(kind, NormKind::TwoOne | NormKind::OneTwo | NormKind::OneInf) {
        return matrix_norm_along(&m.transpose(), kind, NormAxis::Columns);
    }
    Ok(match kind {
        NormKind::Spectral => spectral_norm(m),
        NormKind::Frobenius => m.frobenius_sq().sqrt(),
        NormKind::TwoOne => column_sums(m, |acc, v| acc + v * v)
            .into_iter()
            .map(f64::sqrt)
            .sum(),
        NormKind::OneTwo => column_sums(m, |acc, v| acc + v.abs())
            .into_iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt(),
        NormKind::OneInf => (0..m.rows)
            .map(|r| m.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
    })
}

fn column_sums(m: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a = f(*a, v);
        }
    }
    acc
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 500;
const POWER_SEEDS: [u64; 2] = [0x5EED_0001, 0x5EED_0002];

/// Largest singular value by power iteration on `MᵀM`, best of two seeded
/// restarts.
pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    POWER_SEEDS
        .iter()
        .map(|&seed| power_iteration(m, seed))
        .fold(0.0, f64::max)
}

fn power_iteration(m: &DenseMatrix, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..m.cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm2(&v);
    if n == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= n);

    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = m.matvec_slice(&v);
        let next = norm2(&w);
        if next == 0.0 {
            return sigma;
        }
        let mut u = m.matvec_t_slice(&w);
        let un = norm2(&u);
        if un == 0.0 {
            return next;
        }
        u.iter_mut().for_each(|x| *x /= un);
        v = u;
        let done = (next - sigma).abs() <= POWER_TOL * next;
        sigma = next;
        if done {
            break;
        }
    }
    // Final Rayleigh estimate on the converged direction.
    norm2(&m.matvec_slice(&v)).max(sigma)
}
