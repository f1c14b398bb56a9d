//! Contrastive and classification losses with analytic gradients.
//!
//! For anchor `i` the view set is every other anchor in the batch plus the
//! anchor's own augmented embedding; augmented embeddings of other samples are
//! not part of it. The positive set is the same-class subset of the view set,
//! again including the anchor's own augmentation.
//!
//! The sub-cluster loss splits each anchor's positives in two: positives from
//! the same sub-cluster (plus the own augmentation) contrasted against the full
//! view set at `tau1`, and the remaining positives contrasted against the view
//! set with the same-sub-cluster samples removed at `tau2`, weighted by `beta`.
//! The own augmentation is never a sub-cluster member, so it belongs to both
//! positive sets and the second term is never empty.

use serde::{Deserialize, Serialize};

use crate::domain::{dot, EmbeddingBatch, Matrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    /// Temperature of the plain supervised contrastive loss.
    pub tau: f64,
    /// Temperature of the same-sub-cluster term.
    pub tau1: f64,
    /// Temperature of the same-class, other-sub-cluster term.
    pub tau2: f64,
    /// Weight of the second sub-cluster term.
    pub beta: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            tau1: 0.1,
            tau2: 0.1,
            beta: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau", self.tau), ("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {t}"
                )));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Loss value with the gradient with respect to a single input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub gradient: Matrix,
}

/// Contrastive loss value with gradients for both views of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub value: f64,
    pub grad_anchors: Matrix,
    pub grad_augmented: Matrix,
}

/// Input-space view generation: additive Gaussian noise with standard
/// deviation `sigma`, then each coordinate zeroed with probability `dropout_p`.
pub fn augment_view(
    features: &Matrix,
    sigma: f64,
    dropout_p: f64,
    rng: &mut RandomSource,
) -> Matrix {
    let mut out = features.clone();
    for x in out.as_mut_slice() {
        let noise = rng.gaussian();
        let keep = rng.uniform() >= dropout_p;
        *x = if keep { *x + sigma * noise } else { 0.0 };
    }
    out
}

#[derive(Clone, Copy)]
enum Member {
    Anchor(usize),
    OwnView,
}

struct Workspace<'a> {
    anchors: &'a Matrix,
    augmented: &'a Matrix,
    // anchor-anchor similarity, row-major B x B
    sim: Vec<f64>,
    // anchor i with its own augmentation
    own: Vec<f64>,
    grad_anchors: Matrix,
    grad_augmented: Matrix,
    // scratch for one term
    logits: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(anchors: &'a Matrix, augmented: &'a Matrix) -> Result<Self> {
        if anchors.shape() != augmented.shape() {
            return Err(Error::ShapeMismatch(format!(
                "anchors {:?} vs augmented {:?}",
                anchors.shape(),
                augmented.shape()
            )));
        }
        let b = anchors.rows();
        let mut sim = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                sim[i * b + j] = dot(anchors.row(i), anchors.row(j));
            }
        }
        let own: Vec<f64> = (0..b)
            .map(|i| dot(anchors.row(i), augmented.row(i)))
            .collect();
        if sim.iter().chain(&own).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("similarity".into()));
        }
        Ok(Self {
            anchors,
            augmented,
            sim,
            own,
            grad_anchors: Matrix::zeros(b, anchors.cols()),
            grad_augmented: Matrix::zeros(b, anchors.cols()),
            logits: Vec::with_capacity(b + 1),
        })
    }

    fn similarity(&self, i: usize, m: Member) -> f64 {
        match m {
            Member::Anchor(j) => self.sim[i * self.anchors.rows() + j],
            Member::OwnView => self.own[i],
        }
    }

    /// Adds `weight * mean_{p in P} -log softmax_{a in A}(s_ia / temp)[p]` for
    /// anchor `i`, where `members` lists `A` and flags the positives `P`.
    fn term(&mut self, i: usize, members: &[(Member, bool)], temp: f64, weight: f64) -> f64 {
        let n_pos = members.iter().filter(|(_, p)| *p).count();
        if n_pos == 0 || weight == 0.0 {
            return 0.0;
        }
        self.logits.clear();
        for &(m, _) in members {
            let s = self.similarity(i, m) / temp;
            self.logits.push(s);
        }
        let max = self
            .logits
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let mean_pos = members
            .iter()
            .zip(&self.logits)
            .filter(|((_, p), _)| *p)
            .map(|(_, l)| *l)
            .sum::<f64>()
            / n_pos as f64;
        let value = weight * (lse - mean_pos);

        let inv_pos = 1.0 / n_pos as f64;
        let anchors: &'a Matrix = self.anchors;
        let augmented: &'a Matrix = self.augmented;
        let e = anchors.cols();
        for (k, &(m, is_pos)) in members.iter().enumerate() {
            let prob = (self.logits[k] - lse).exp();
            let coef = weight / temp * (prob - if is_pos { inv_pos } else { 0.0 });
            if coef == 0.0 {
                continue;
            }
            let other = match m {
                Member::Anchor(j) => anchors.row(j),
                Member::OwnView => augmented.row(i),
            };
            for (d, o) in other.iter().enumerate().take(e) {
                self.grad_anchors[(i, d)] += coef * o;
            }
            let zi = anchors.row(i);
            let target = match m {
                Member::Anchor(j) => self.grad_anchors.row_mut(j),
                Member::OwnView => self.grad_augmented.row_mut(i),
            };
            for (g, z) in target.iter_mut().zip(zi) {
                *g += coef * z;
            }
        }
        value
    }

    fn finish(self, value: f64) -> Result<ContrastiveOutput> {
        if !value.is_finite() || !self.grad_anchors.is_finite() || !self.grad_augmented.is_finite()
        {
            return Err(Error::NonFinite("contrastive loss".into()));
        }
        Ok(ContrastiveOutput {
            value,
            grad_anchors: self.grad_anchors,
            grad_augmented: self.grad_augmented,
        })
    }
}

/// Supervised contrastive loss summed over anchors.
pub fn scl_loss(batch: &EmbeddingBatch, config: &ContrastiveConfig) -> Result<ContrastiveOutput> {
    scl_loss_unchecked(batch.anchors(), batch.augmented(), batch.labels(), config)
}

/// [`scl_loss`] on raw matrices, without the unit-length check. The gradient
/// treats the embeddings as free variables, so this is the entry point for
/// differentiating through perturbed embeddings.
pub fn scl_loss_unchecked(
    anchors: &Matrix,
    augmented: &Matrix,
    labels: &[usize],
    config: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    config.validate()?;
    check_labels(anchors, labels)?;
    let mut ws = Workspace::new(anchors, augmented)?;
    let b = labels.len();
    let mut members = Vec::with_capacity(b);
    let mut total = 0.0;
    for i in 0..b {
        members.clear();
        members.extend(
            (0..b)
                .filter(|&j| j != i)
                .map(|j| (Member::Anchor(j), labels[j] == labels[i])),
        );
        members.push((Member::OwnView, true));
        total += ws.term(i, &members, config.tau, 1.0);
    }
    ws.finish(total)
}

/// Sub-cluster contrastive loss; the batch must carry cluster ids.
pub fn subcluster_loss(
    batch: &EmbeddingBatch,
    config: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    let clusters = batch
        .cluster_ids()
        .ok_or_else(|| Error::InvalidArgument("batch has no cluster ids".into()))?;
    subcluster_loss_unchecked(
        batch.anchors(),
        batch.augmented(),
        batch.labels(),
        clusters,
        config,
    )
}

/// [`subcluster_loss`] on raw matrices, without the unit-length check.
pub fn subcluster_loss_unchecked(
    anchors: &Matrix,
    augmented: &Matrix,
    labels: &[usize],
    clusters: &[usize],
    config: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    config.validate()?;
    check_labels(anchors, labels)?;
    if clusters.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cluster ids for {} rows",
            clusters.len(),
            labels.len()
        )));
    }
    let mut ws = Workspace::new(anchors, augmented)?;
    let b = labels.len();
    let same_cluster = |i: usize, j: usize| labels[j] == labels[i] && clusters[j] == clusters[i];
    let mut members = Vec::with_capacity(b);
    let mut total = 0.0;
    for i in 0..b {
        members.clear();
        members.extend(
            (0..b)
                .filter(|&j| j != i)
                .map(|j| (Member::Anchor(j), same_cluster(i, j))),
        );
        members.push((Member::OwnView, true));
        total += ws.term(i, &members, config.tau1, 1.0);

        if config.beta > 0.0 {
            members.clear();
            members.extend(
                (0..b)
                    .filter(|&j| j != i && !same_cluster(i, j))
                    .map(|j| (Member::Anchor(j), labels[j] == labels[i])),
            );
            members.push((Member::OwnView, true));
            total += ws.term(i, &members, config.tau2, config.beta);
        }
    }
    ws.finish(total)
}

fn check_labels(anchors: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != anchors.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            anchors.rows()
        )));
    }
    Ok(())
}

/// Mean class-weighted cross-entropy over the batch; gradient is with respect
/// to the logits.
pub fn weighted_cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<LossOutput> {
    let (b, k) = logits.shape();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {b} rows",
            labels.len()
        )));
    }
    if class_weights.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    if let Some(w) = class_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "class weights must be positive and finite, got {w}"
        )));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut gradient = Matrix::zeros(b, k);
    let mut value = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let w = class_weights[y];
        value += w * (lse - row[y]);
        let g = gradient.row_mut(i);
        for (c, gc) in g.iter_mut().enumerate() {
            let p = (row[c] - lse).exp();
            *gc = w * inv_b * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    let value = value * inv_b;
    if !value.is_finite() || !gradient.is_finite() {
        return Err(Error::NonFinite("cross-entropy".into()));
    }
    Ok(LossOutput { value, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::unit_normalize;
    use crate::testutil::{central_difference, max_relative_error};

    fn random_unit(b: usize, e: usize, rng: &mut RandomSource) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| unit_normalize(&(0..e).map(|_| rng.gaussian()).collect::<Vec<_>>()).unwrap())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn augment_identity_and_determinism() {
        let mut rng = RandomSource::new(1, "t");
        let x = random_unit(5, 4, &mut rng);
        let mut a = RandomSource::new(3, "augment");
        assert_eq!(augment_view(&x, 0.0, 0.0, &mut a), x);
        let mut a1 = RandomSource::new(3, "augment");
        let mut a2 = RandomSource::new(3, "augment");
        assert_eq!(
            augment_view(&x, 0.2, 0.3, &mut a1),
            augment_view(&x, 0.2, 0.3, &mut a2)
        );
    }

    #[test]
    fn augment_noise_scale() {
        let x = Matrix::zeros(100, 16);
        let mut rng = RandomSource::new(11, "augment");
        let y = augment_view(&x, 0.1, 0.0, &mut rng);
        let n = y.as_slice().len() as f64;
        let mean = y.as_slice().iter().sum::<f64>() / n;
        let var = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.08..=0.12).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn augment_dropout_rate() {
        let x = Matrix::from_vec(200, 50, vec![1.0; 10_000]).unwrap();
        let mut rng = RandomSource::new(2, "augment");
        let y = augment_view(&x, 0.0, 0.25, &mut rng);
        let zeros = y.as_slice().iter().filter(|v| **v == 0.0).count() as f64 / 10_000.0;
        assert!((zeros - 0.25).abs() < 0.02, "dropout fraction {zeros}");
    }

    #[test]
    fn singleton_batch_has_zero_loss() {
        let z = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let batch = EmbeddingBatch::new(z.clone(), z, vec![0]).unwrap();
        let out = scl_loss(&batch, &ContrastiveConfig::default()).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn two_identical_same_class() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let batch = EmbeddingBatch::new(z.clone(), z, vec![3, 3]).unwrap();
        let out = scl_loss(&batch, &ContrastiveConfig::default()).unwrap();
        assert!((out.value - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((out.value - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn subcluster_requires_ids() {
        let z = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let batch = EmbeddingBatch::new(z.clone(), z, vec![0]).unwrap();
        assert!(subcluster_loss(&batch, &ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn degenerate_subclusters_reduce_to_scl() {
        let mut rng = RandomSource::new(5, "t");
        let a = random_unit(7, 3, &mut rng);
        let t = random_unit(7, 3, &mut rng);
        let labels = vec![0, 1, 0, 2, 1, 0, 2];
        let cfg = ContrastiveConfig {
            tau: 0.3,
            tau1: 0.3,
            tau2: 0.05,
            beta: 0.0,
        };
        let scl = scl_loss_unchecked(&a, &t, &labels, &cfg).unwrap();
        let sub = subcluster_loss_unchecked(&a, &t, &labels, &[0; 7], &cfg).unwrap();
        assert!((scl.value - sub.value).abs() <= 1e-12);
    }

    #[test]
    fn scl_gradient_matches_differences() {
        let mut rng = RandomSource::new(8, "t");
        let a = random_unit(6, 4, &mut rng);
        let t = random_unit(6, 4, &mut rng);
        let labels = vec![0, 1, 1, 0, 2, 1];
        let cfg = ContrastiveConfig {
            tau: 0.5,
            ..Default::default()
        };
        let out = scl_loss_unchecked(&a, &t, &labels, &cfg).unwrap();
        let fd_a = central_difference(&a, 1e-5, |m| {
            scl_loss_unchecked(m, &t, &labels, &cfg).unwrap().value
        });
        let fd_t = central_difference(&t, 1e-5, |m| {
            scl_loss_unchecked(&a, m, &labels, &cfg).unwrap().value
        });
        assert!(max_relative_error(&out.grad_anchors, &fd_a) < 1e-5);
        assert!(max_relative_error(&out.grad_augmented, &fd_t) < 1e-5);
    }

    #[test]
    fn subcluster_gradient_matches_differences() {
        let mut rng = RandomSource::new(9, "t");
        let a = random_unit(6, 4, &mut rng);
        let t = random_unit(6, 4, &mut rng);
        let labels = vec![0, 0, 0, 1, 1, 0];
        let clusters = vec![0, 1, 0, 0, 0, 1];
        let cfg = ContrastiveConfig {
            tau: 0.5,
            tau1: 0.4,
            tau2: 0.7,
            beta: 0.8,
        };
        let out = subcluster_loss_unchecked(&a, &t, &labels, &clusters, &cfg).unwrap();
        let fd_a = central_difference(&a, 1e-5, |m| {
            subcluster_loss_unchecked(m, &t, &labels, &clusters, &cfg)
                .unwrap()
                .value
        });
        let fd_t = central_difference(&t, 1e-5, |m| {
            subcluster_loss_unchecked(&a, m, &labels, &clusters, &cfg)
                .unwrap()
                .value
        });
        assert!(max_relative_error(&out.grad_anchors, &fd_a) < 1e-5);
        assert!(max_relative_error(&out.grad_augmented, &fd_t) < 1e-5);
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let out = weighted_cross_entropy(&logits, &[0], &[2.0, 1.0]).unwrap();
        assert!((out.value - 2.0 * 2f64.ln()).abs() < 1e-12);

        let logits = Matrix::from_rows(&[[50.0, -50.0, -50.0]]).unwrap();
        let out = weighted_cross_entropy(&logits, &[0], &[1.0; 3]).unwrap();
        assert!(out.value < 1e-40);

        assert!(weighted_cross_entropy(&logits, &[3], &[1.0; 3]).is_err());
        assert!(weighted_cross_entropy(&logits, &[0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = RandomSource::new(10, "t");
        let data: Vec<f64> = (0..40).map(|_| 2.0 * rng.gaussian()).collect();
        let logits = Matrix::from_vec(8, 5, data).unwrap();
        let labels = vec![0, 4, 2, 2, 1, 3, 0, 4];
        let w = [0.3, 1.2, 0.7, 2.0, 0.9];
        let out = weighted_cross_entropy(&logits, &labels, &w).unwrap();
        let fd = central_difference(&logits, 1e-5, |m| {
            weighted_cross_entropy(m, &labels, &w).unwrap().value
        });
        assert!(max_relative_error(&out.gradient, &fd) < 1e-6);
    }

    #[test]
    fn cross_entropy_scales_linearly_in_weights() {
        let mut rng = RandomSource::new(12, "t");
        let data: Vec<f64> = (0..12).map(|_| rng.gaussian()).collect();
        let logits = Matrix::from_vec(4, 3, data).unwrap();
        let labels = vec![0, 1, 2, 1];
        let w = [0.5, 1.5, 1.0];
        let kappa = 4.0;
        let scaled: Vec<f64> = w.iter().map(|x| x * kappa).collect();
        let a = weighted_cross_entropy(&logits, &labels, &w).unwrap();
        let b = weighted_cross_entropy(&logits, &labels, &scaled).unwrap();
        assert_eq!(b.value, kappa * a.value);
        for (x, y) in a.gradient.as_slice().iter().zip(b.gradient.as_slice()) {
            assert_eq!(*y, kappa * x);
        }
    }
}
