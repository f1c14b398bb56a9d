//! Class-separation weights for the classification loss.
//!
//! A class is weighted by the reciprocal of the distance to its nearest
//! neighbouring class, measured once between class centroids and once between
//! the closest pair of sub-cluster centroids. Each reciprocal vector is
//! normalized to sum 1; the final weight is their sum.

use serde::{Deserialize, Serialize};

use crate::clustering::SubclusterAssignment;
use crate::domain::{euclidean_distance, Matrix};
use crate::error::{Error, Result};

/// Distances below this are treated as collapsed geometry.
pub const MIN_SEPARATION: f64 = 1e-8;

/// Which per-class weights the classifier is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMode {
    /// Uniform weight 1.
    None,
    /// Normalized reciprocal class-centroid distance.
    Class,
    /// Normalized reciprocal sub-cluster distance.
    Sub,
    /// Sum of the two normalized weights.
    Combined,
    /// Normalized reciprocal class frequency; comparator only.
    InverseFrequency,
}

impl ReweightMode {
    pub const DISTANCE_MODES: [ReweightMode; 4] = [
        ReweightMode::None,
        ReweightMode::Combined,
        ReweightMode::Class,
        ReweightMode::Sub,
    ];

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            ReweightMode::None => "No re-weighting",
            ReweightMode::Combined => "ω̂_c+ω̂′_c",
            ReweightMode::Class => "ω̂_c",
            ReweightMode::Sub => "ω̂′_c",
            ReweightMode::InverseFrequency => "Inverse frequency",
        }
    }

    /// Weights this mode yields when every class is equally separated and
    /// equally frequent. Used before the first update.
    pub fn neutral_weights(self, classes: usize) -> Vec<f64> {
        let each = match self {
            ReweightMode::None => 1.0,
            ReweightMode::Class | ReweightMode::Sub | ReweightMode::InverseFrequency => {
                1.0 / classes as f64
            }
            ReweightMode::Combined => 2.0 / classes as f64,
        };
        vec![each; classes]
    }

    pub fn needs_distances(self) -> bool {
        matches!(
            self,
            ReweightMode::Class | ReweightMode::Sub | ReweightMode::Combined
        )
    }
}

impl std::str::FromStr for ReweightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReweightMode::None),
            "class" => Ok(ReweightMode::Class),
            "sub" => Ok(ReweightMode::Sub),
            "combined" => Ok(ReweightMode::Combined),
            "inverse_frequency" => Ok(ReweightMode::InverseFrequency),
            other => Err(Error::InvalidConfig(format!(
                "unknown reweight mode {other:?}"
            ))),
        }
    }
}

/// Everything computed during one weight update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub class_centroids: Matrix,
    pub pairwise: Matrix,
    pub class_min: Vec<f64>,
    pub sub_min: Vec<f64>,
    pub w_class: Vec<f64>,
    pub w_sub: Vec<f64>,
    pub w_final: Vec<f64>,
}

impl DistanceReport {
    /// Computes both granularities on the same embeddings. Sub-cluster
    /// centroids are plain means over `assignment`, like the class centroids.
    pub fn compute(
        embeddings: &Matrix,
        labels: &[usize],
        assignment: &SubclusterAssignment,
    ) -> Result<Self> {
        let k = assignment.classes.len();
        let class_centroids = class_centroids(embeddings, labels, k)?;
        let (pairwise, class_min) = min_class_distances(&class_centroids)?;
        let w_class = class_weights(&class_min)?;
        let subs = subcluster_centroids(embeddings, assignment)?;
        let (sub_min, w_sub) = subcluster_weights(&subs)?;
        let w_final = combined_weights(&w_class, &w_sub)?;
        Ok(Self {
            class_centroids,
            pairwise,
            class_min,
            sub_min,
            w_class,
            w_sub,
            w_final,
        })
    }

    pub fn weights_for(&self, mode: ReweightMode) -> Option<&[f64]> {
        match mode {
            ReweightMode::Class => Some(&self.w_class),
            ReweightMode::Sub => Some(&self.w_sub),
            ReweightMode::Combined => Some(&self.w_final),
            ReweightMode::None | ReweightMode::InverseFrequency => None,
        }
    }
}

/// Mean embedding of every class (not re-normalized).
pub fn class_centroids(
    embeddings: &Matrix,
    labels: &[usize],
    num_classes: usize,
) -> Result<Matrix> {
    if embeddings.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings for {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    let mut sums = Matrix::zeros(num_classes, embeddings.cols());
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        counts[y] += 1;
        for (s, x) in sums.row_mut(y).iter_mut().zip(row) {
            *s += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidArgument(format!("class {c} is empty")));
        }
        let inv = 1.0 / n as f64;
        sums.row_mut(c).iter_mut().for_each(|s| *s *= inv);
    }
    Ok(sums)
}

/// Pairwise centroid distances and, per class, the distance to its nearest
/// other class.
pub fn min_class_distances(centroids: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let k = centroids.rows();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    let mut pairwise = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a + 1..k {
            let d = euclidean_distance(centroids.row(a), centroids.row(b))?;
            if d.is_nan() || d < MIN_SEPARATION {
                return Err(Error::ZeroClassSeparation { a, b, distance: d });
            }
            pairwise[(a, b)] = d;
            pairwise[(b, a)] = d;
        }
    }
    let class_min = (0..k)
        .map(|a| {
            (0..k)
                .filter(|&b| b != a)
                .map(|b| pairwise[(a, b)])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok((pairwise, class_min))
}

/// Reciprocal distances normalized to sum 1.
pub fn class_weights(class_min: &[f64]) -> Result<Vec<f64>> {
    normalized_reciprocals(class_min)
}

fn normalized_reciprocals(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("no distances".into()));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "distances must be positive and finite, got {d}"
        )));
    }
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 / d).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Plain-mean centroid of every sub-cluster, grouped by class.
pub fn subcluster_centroids(
    embeddings: &Matrix,
    assignment: &SubclusterAssignment,
) -> Result<Vec<Matrix>> {
    (0..assignment.classes.len())
        .map(|c| {
            let groups = assignment.cluster_members(c);
            let mut out = Matrix::zeros(groups.len(), embeddings.cols());
            for (k, rows) in groups.iter().enumerate() {
                if rows.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} cluster {k} is empty"
                    )));
                }
                let inv = 1.0 / rows.len() as f64;
                let target = out.row_mut(k);
                for &r in rows {
                    for (t, x) in target.iter_mut().zip(embeddings.row(r)) {
                        *t += x;
                    }
                }
                target.iter_mut().for_each(|t| *t *= inv);
            }
            Ok(out)
        })
        .collect()
}

/// For each class, the smallest distance between one of its sub-cluster
/// centroids and a sub-cluster centroid of any other class.
pub fn subcluster_min_distances(sub_centroids: &[Matrix]) -> Result<Vec<f64>> {
    let k = sub_centroids.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if let Some(c) = sub_centroids.iter().position(|m| m.rows() == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has no sub-clusters"
        )));
    }
    let mut best = vec![f64::INFINITY; k];
    for a in 0..k {
        for b in a + 1..k {
            let mut d_ab = f64::INFINITY;
            for s in sub_centroids[a].iter_rows() {
                for t in sub_centroids[b].iter_rows() {
                    d_ab = d_ab.min(euclidean_distance(s, t)?);
                }
            }
            if d_ab.is_nan() || d_ab < MIN_SEPARATION {
                return Err(Error::ZeroSubclusterSeparation {
                    a,
                    b,
                    distance: d_ab,
                });
            }
            best[a] = best[a].min(d_ab);
            best[b] = best[b].min(d_ab);
        }
    }
    Ok(best)
}

/// Returns `(sub_min, w_sub)`.
pub fn subcluster_weights(sub_centroids: &[Matrix]) -> Result<(Vec<f64>, Vec<f64>)> {
    let sub_min = subcluster_min_distances(sub_centroids)?;
    let w = normalized_reciprocals(&sub_min)?;
    Ok((sub_min, w))
}

/// Elementwise sum of the class and sub-cluster weights (sums to 2).
pub fn combined_weights(w_class: &[f64], w_sub: &[f64]) -> Result<Vec<f64>> {
    if w_class.len() != w_sub.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} class weights vs {} sub-cluster weights",
            w_class.len(),
            w_sub.len()
        )));
    }
    Ok(w_class.iter().zip(w_sub).map(|(a, b)| a + b).collect())
}

/// `1 / n_c` normalized to sum 1.
pub fn inverse_frequency_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    let as_f: Vec<f64> = class_counts.iter().map(|&n| n as f64).collect();
    normalized_reciprocals(&as_f)
}
