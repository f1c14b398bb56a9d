//! Core data types shared by every stage: dense matrices, labelled datasets,
//! embedding batches, vector math and named random streams.

use std::ops::{Index, IndexMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a vector lies on the unit sphere.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean length.
pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::DegenerateVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two unit vectors: their dot product clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_len(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Fails with [`Error::NotUnit`] on the first row whose norm is off the unit sphere.
pub fn ensure_unit_rows(m: &Matrix) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { row, norm: n });
        }
    }
    Ok(())
}

/// Labelled feature vectors with integer classes in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    ids: Vec<String>,
}

impl Dataset {
    /// Validates and builds a dataset. `num_classes` defaults to `max(label) + 1`;
    /// every class must hold at least one sample.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<String>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if features.rows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidDataset(
                "feature dimension must be >= 1".into(),
            ));
        }
        if !features.is_finite() {
            return Err(Error::InvalidDataset(
                "features contain non-finite values".into(),
            ));
        }
        let k = match num_classes {
            Some(k) => k,
            None => labels.iter().max().map_or(0, |m| m + 1),
        };
        if k < 2 {
            return Err(Error::InvalidDataset(format!(
                "at least 2 classes required, found {k}"
            )));
        }
        let mut class_counts = vec![0usize; k];
        for &y in &labels {
            if y >= k {
                return Err(Error::InvalidDataset(format!(
                    "label {y} out of range for {k} classes"
                )));
            }
            class_counts[y] += 1;
        }
        if let Some(missing) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::NonContiguousLabels { missing });
        }
        Ok(Self {
            features,
            labels,
            class_counts,
            ids,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    /// Row subset that keeps the parent's class count; fails if a class ends up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
            Some(self.num_classes()),
        )
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}

/// A batch of unit-length anchor embeddings together with one augmented view
/// per anchor. Positive and view sets for the contrastive losses are derived
/// from `labels` and the optional sub-cluster ids.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    anchors: Matrix,
    augmented: Matrix,
    labels: Vec<usize>,
    cluster_ids: Option<Vec<usize>>,
}

impl EmbeddingBatch {
    pub fn new(anchors: Matrix, augmented: Matrix, labels: Vec<usize>) -> Result<Self> {
        if anchors.shape() != augmented.shape() {
            return Err(Error::ShapeMismatch(format!(
                "anchors {:?} vs augmented {:?}",
                anchors.shape(),
                augmented.shape()
            )));
        }
        if labels.len() != anchors.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                anchors.rows()
            )));
        }
        ensure_unit_rows(&anchors)?;
        ensure_unit_rows(&augmented)?;
        Ok(Self {
            anchors,
            augmented,
            labels,
            cluster_ids: None,
        })
    }

    /// Attaches per-row sub-cluster ids. Ids are only compared between rows of
    /// the same class, so class-local numbering is fine.
    pub fn with_cluster_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cluster ids for {} rows",
                ids.len(),
                self.labels.len()
            )));
        }
        self.cluster_ids = Some(ids);
        Ok(self)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn augmented(&self) -> &Matrix {
        &self.augmented
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_ids(&self) -> Option<&[usize]> {
        self.cluster_ids.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Seeded random stream identified by `(seed, stream)`. Equal pairs replay
/// equal draw sequences; different stream labels are statistically independent.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: String,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: &str) -> Self {
        Self {
            seed,
            stream: stream.to_string(),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, stream)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Independent child stream `"{stream}/{label}"` under the same seed.
    pub fn substream(&self, label: &str) -> RandomSource {
        RandomSource::new(self.seed, &format!("{}/{label}", self.stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `[0, n)`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

// FNV-1a over the stream label folded into a splitmix64 finalizer.
fn mix_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
