//! Labelled datasets in the unit ball: MNIST IDX loading, synthetic blobs,
//! subsetting and hold-out splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<DenseVector>,
    labels: Vec<usize>,
    k: usize,
    norm_bound: f64,
}

impl Dataset {
    pub fn new(features: Vec<DenseVector>, labels: Vec<usize>, k: usize, norm_bound: f64) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.dim() != first.dim()) {
                return Err(Error::DimensionMismatch("features differ in dimension".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        if let Some(x) = features.iter().find(|f| f.norm() > norm_bound * (1.0 + NORM_SLACK)) {
            return Err(Error::InvalidArgument(format!(
                "sample norm {} exceeds bound {norm_bound}",
                x.norm()
            )));
        }
        Ok(Self {
            features,
            labels,
            k,
            norm_bound,
        })
    }

    /// Rescales every sample by the largest sample norm so that `B = 1`.
    pub fn normalized(features: Vec<DenseVector>, labels: Vec<usize>, k: usize) -> Result<Self> {
        let max = features.iter().map(DenseVector::norm).fold(0.0, f64::max);
        let features = if max > 0.0 {
            features.iter().map(|f| f.scaled(1.0 / max)).collect()
        } else {
            features
        };
        Self::new(features, labels, k, 1.0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, DenseVector::dim)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn features(&self) -> &[DenseVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DenseVector, usize)> + '_ {
        self.features.iter().zip(self.labels.iter().copied())
    }

    /// Samples at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            norm_bound: self.norm_bound,
        }
    }

    /// Rows of a batch matrix for the samples at `indices`.
    pub fn batch_matrix(&self, indices: &[usize]) -> DenseMatrix {
        let n = self.dim();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.features[i].as_slice());
        }
        DenseMatrix::from_vec_unchecked(indices.len(), n, data)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Raw IDX image tensor (`count × rows × cols` bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
    }
    Ok(())
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        let b = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| self.err(self.offset, "truncated header"))?;
        self.offset = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let at = self.offset;
        let magic = self.u32()?;
        if magic != expected {
            return Err(self.err(at, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn body(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.offset + len;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated body: need {len} bytes from offset {}", self.offset),
            ));
        }
        let out = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(out)
    }
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_maybe_gz(path)?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        offset: 0,
    };
    c.magic(IDX_IMAGES_MAGIC)?;
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let pixels = c.body(count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        offset: 0,
    };
    c.magic(IDX_LABELS_MAGIC)?;
    let count = c.u32()? as usize;
    Ok(c.body(count)?.to_vec())
}

/// Writes big-endian IDX; gzipped when the path ends in `.gz`.
pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::DimensionMismatch("pixel buffer does not match header".into()));
    }
    let mut bytes = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(&images.pixels);
    write_maybe_gz(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_maybe_gz(path, &bytes)
}

/// Loads an IDX image/label pair, scales pixels to `[0, 1]` and then
/// rescales so the largest sample norm is 1.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let dim = images.rows * images.cols;
    let features = (0..images.count)
        .map(|i| {
            DenseVector::from_vec_unchecked(
                images.pixels[i * dim..(i + 1) * dim]
                    .iter()
                    .map(|&p| p as f64 / 255.0)
                    .collect(),
            )
        })
        .collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let k = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::normalized(features, labels, k)
}

/// `k` Gaussian clusters in `n` dimensions with unit per-coordinate noise.
/// Cluster centres are random directions at radius `separation/√2`, so the
/// expected distance between two centres is about `separation`.
pub fn synth_blobs(k: usize, n: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::InvalidArgument("synthetic data needs k ≥ 2".into()));
    }
    if per_class == 0 || n == 0 {
        return Err(Error::InvalidArgument("per_class and n must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = crate::linalg::norm2(&dir).max(f64::MIN_POSITIVE);
            dir.iter().map(|v| v * radius / norm).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(k * per_class);
    let mut labels = Vec::with_capacity(k * per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let x: Vec<f64> = centre
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            features.push(DenseVector::new(x)?);
            labels.push(c);
        }
    }
    Dataset::normalized(features, labels, k)
}

/// Random subset of `round(fraction·m)` samples, returned in original order.
///
/// Stratified subsets allocate the target size across classes by largest
/// remainder and keep at least one sample of every present class.
pub fn subset_fraction(data: &Dataset, fraction: f64, seed: u64, stratified: bool) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let m = data.len();
    let target = ((fraction * m as f64).round() as usize).clamp(1, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = if stratified {
        stratified_indices(data, target, &mut rng)
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng);
        idx.truncate(target);
        idx
    };
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}

fn stratified_indices(data: &Dataset, target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = data.len() as f64;
    let counts = data.class_counts();
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * target as f64 / m).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // largest remainder first, lowest class index on ties
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    for (c, a) in alloc.iter_mut().enumerate() {
        if counts[c] > 0 && *a == 0 {
            log::warn!("fraction too small for class {c}; keeping one sample");
            *a = 1;
        }
    }

    let mut chosen = Vec::with_capacity(target);
    for (c, &take) in alloc.iter().enumerate() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        members.shuffle(rng);
        chosen.extend_from_slice(&members[..take.min(members.len())]);
    }
    chosen
}

/// Disjoint `(train, validation)` split with `holdout` validation samples.
pub fn split_holdout(data: &Dataset, holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if holdout >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "holdout {holdout} must be smaller than dataset size {}",
            data.len()
        )));
    }
    let (train, val) = split_indices(data.len(), holdout, seed);
    Ok((data.select(&train), data.select(&val)))
}

/// Index form of [`split_holdout`]; both halves sorted.
pub fn split_indices(m: usize, holdout: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..holdout].to_vec();
    let mut train = idx[holdout..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}
