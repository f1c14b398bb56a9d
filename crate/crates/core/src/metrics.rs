//! Class-balanced evaluation metrics over a confusion matrix.
//!
//! Balanced precision rescales every false positive coming from class `j` by
//! `n_j / n_k`, so a skewed evaluation split is scored as if every class had
//! the size of class `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[j][k]` = samples of true class `j` predicted as `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(
                "confusion matrix must be square and nonempty".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(
        truth: &[usize],
        predicted: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class index out of range: true {t}, predicted {p}"
                )));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Row sums: samples per true class.
    pub fn class_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn require_nonempty_rows(&self) -> Result<Vec<u64>> {
        let totals = self.class_totals();
        if let Some(k) = totals.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "class {k} has no samples in the evaluated split"
            )));
        }
        Ok(totals)
    }

    pub fn recall(&self, k: usize) -> Result<f64> {
        let n = self.counts[k].iter().sum::<u64>();
        if n == 0 {
            return Err(Error::InvalidArgument(format!("class {k} has no samples")));
        }
        Ok(self.counts[k][k] as f64 / n as f64)
    }
}

/// Mean per-class recall.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.require_nonempty_rows()?;
    let k = cm.num_classes();
    let mut total = 0.0;
    for c in 0..k {
        total += cm.recall(c)?;
    }
    Ok(total / k as f64)
}

/// Precision of class `k` with false positives from class `j` scaled by
/// `n_j / n_k`. Defined as 0 when nothing is predicted as `k`.
pub fn balanced_precision(cm: &ConfusionMatrix, k: usize) -> Result<f64> {
    if k >= cm.num_classes() {
        return Err(Error::InvalidArgument(format!("class {k} out of range")));
    }
    let totals = cm.class_totals();
    let n_k = totals[k];
    if n_k == 0 {
        return Err(Error::InvalidArgument(format!("class {k} has no samples")));
    }
    let tp = cm.get(k, k) as f64;
    let mut denom = tp;
    for (j, &n_j) in totals.iter().enumerate() {
        if j != k {
            denom += (n_j as f64 / n_k as f64) * cm.get(j, k) as f64;
        }
    }
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(tp / denom)
}

/// Macro mean of the harmonic means of recall and balanced precision.
pub fn balanced_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.require_nonempty_rows()?;
    let k = cm.num_classes();
    let mut total = 0.0;
    for c in 0..k {
        let r = cm.recall(c)?;
        let p = balanced_precision(cm, c)?;
        if r + p > 0.0 {
            total += 2.0 * r * p / (r + p);
        }
    }
    Ok(total / k as f64)
}

/// All metrics for one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub balanced_accuracy: f64,
    pub balanced_f1: f64,
    pub recall: Vec<f64>,
    pub balanced_precision: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsSummary {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let k = confusion.num_classes();
        let recall = (0..k)
            .map(|c| confusion.recall(c))
            .collect::<Result<Vec<_>>>()?;
        let balanced_precision = (0..k)
            .map(|c| balanced_precision(&confusion, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            balanced_accuracy: balanced_accuracy(&confusion)?,
            balanced_f1: balanced_f1(&confusion)?,
            recall,
            balanced_precision,
            confusion,
        })
    }
}
