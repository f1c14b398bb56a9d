//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here is written from the definitions, with explicit sets and
//! no shared code paths with the library beyond plain data types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use subtail::domain::{Matrix, RandomSource};

pub fn gaussian_matrix(rng: &mut RandomSource, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.gaussian()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn unit_matrix(rng: &mut RandomSource, rows: usize, cols: usize) -> Matrix {
    let mut m = gaussian_matrix(rng, rows, cols, 1.0);
    for i in 0..rows {
        let row = m.row_mut(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A batch element: `(false, j)` is anchor `j`, `(true, i)` the augmented view of `i`.
type Elem = (bool, usize);

struct Batch<'a> {
    anchors: &'a Matrix,
    augmented: &'a Matrix,
}

impl Batch<'_> {
    fn vector(&self, e: Elem) -> &[f64] {
        if e.0 {
            self.augmented.row(e.1)
        } else {
            self.anchors.row(e.1)
        }
    }

    /// `-(1/|P|) Σ_{p∈P} log(exp(z_i·z_p/τ) / Σ_{a∈A} exp(z_i·z_a/τ))`.
    fn term(
        &self,
        i: usize,
        positives: &BTreeSet<Elem>,
        denominator: &BTreeSet<Elem>,
        tau: f64,
    ) -> f64 {
        if positives.is_empty() {
            return 0.0;
        }
        let z = self.anchors.row(i);
        let denom: f64 = denominator
            .iter()
            .map(|&a| (dot(z, self.vector(a)) / tau).exp())
            .sum();
        let total: f64 = positives
            .iter()
            .map(|&p| -((dot(z, self.vector(p)) / tau).exp() / denom).ln())
            .sum();
        total / positives.len() as f64
    }
}

fn others(b: usize, i: usize, keep: impl Fn(usize) -> bool) -> BTreeSet<Elem> {
    (0..b)
        .filter(|&j| j != i && keep(j))
        .map(|j| (false, j))
        .collect()
}

pub fn scl_literal(anchors: &Matrix, augmented: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let batch = Batch { anchors, augmented };
    let b = labels.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut v = others(b, i, |_| true);
        let mut p = others(b, i, |j| labels[j] == labels[i]);
        v.insert((true, i));
        p.insert((true, i));
        total += batch.term(i, &p, &v, tau);
    }
    total
}

pub fn subcluster_literal(
    anchors: &Matrix,
    augmented: &Matrix,
    labels: &[usize],
    clusters: &[usize],
    (tau1, tau2, beta): (f64, f64, f64),
) -> f64 {
    let batch = Batch { anchors, augmented };
    let b = labels.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut v_tilde = others(b, i, |_| true);
        v_tilde.insert((true, i));
        let mut p_tilde = others(b, i, |j| labels[j] == labels[i]);
        p_tilde.insert((true, i));
        let m = others(b, i, |j| {
            labels[j] == labels[i] && clusters[j] == clusters[i]
        });
        let mut m_tilde = m.clone();
        m_tilde.insert((true, i));

        total += batch.term(i, &m_tilde, &v_tilde, tau1);
        if beta != 0.0 {
            let pos: BTreeSet<Elem> = p_tilde.difference(&m).copied().collect();
            let den: BTreeSet<Elem> = v_tilde.difference(&m).copied().collect();
            total += beta * batch.term(i, &pos, &den, tau2);
        }
    }
    total
}

pub fn weighted_ce_literal(logits: &Matrix, labels: &[usize], weights: &[f64]) -> f64 {
    let b = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        total += -weights[y] * (row[y].exp() / z).ln();
    }
    total / b as f64
}

/// Fourth-order central differences of `f` over every entry of `at`:
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// `f` also returns the branch pattern of its piecewise-smooth pieces (e.g.
/// which ReLUs are active). Entries whose stencil crosses a branch boundary
/// have no valid difference and come back as `None`.
pub fn central_difference(
    at: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> (f64, Vec<bool>),
) -> Vec<Option<f64>> {
    let (_, base) = f(at);
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|k| {
            let x = at[k];
            let mut smooth = true;
            let mut eval = |offset: f64| {
                probe[k] = x + offset;
                let (value, branch) = f(&probe);
                smooth &= branch == base;
                value
            };
            let d = -eval(2.0 * h) + 8.0 * eval(h) - 8.0 * eval(-h) + eval(-2.0 * h);
            probe[k] = x;
            smooth.then(|| d / (12.0 * h))
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over entries with a valid
/// difference, and the number of entries skipped.
pub fn max_relative_error(analytic: &[f64], numeric: &[Option<f64>]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        match n {
            Some(n) => worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6)),
            None => skipped += 1,
        }
    }
    (worst, skipped)
}
// ---- metrics, straight from the definitions ----

fn row_total(cm: &[Vec<u64>], j: usize) -> f64 {
    cm[j].iter().sum::<u64>() as f64
}

pub fn ba_literal(cm: &[Vec<u64>]) -> f64 {
    let k = cm.len();
    (0..k)
        .map(|c| cm[c][c] as f64 / row_total(cm, c))
        .sum::<f64>()
        / k as f64
}

/// `BP_k = TP_k / (TP_k + Σ_{j≠k} π_jk FP_jk)` with `π_jk = n_j / n_k`.
pub fn bp_literal(cm: &[Vec<u64>], k: usize) -> f64 {
    let tp = cm[k][k] as f64;
    let mut weighted_fp = 0.0;
    for j in 0..cm.len() {
        if j != k {
            let pi = row_total(cm, j) / row_total(cm, k);
            weighted_fp += pi * cm[j][k] as f64;
        }
    }
    if tp + weighted_fp == 0.0 {
        0.0
    } else {
        tp / (tp + weighted_fp)
    }
}

pub fn f1_literal(cm: &[Vec<u64>]) -> f64 {
    let k = cm.len();
    let mut total = 0.0;
    for c in 0..k {
        let r = cm[c][c] as f64 / row_total(cm, c);
        let p = bp_literal(cm, c);
        if r + p > 0.0 {
            total += 2.0 * r * p / (r + p);
        }
    }
    total / k as f64
}

// ---- reweighting ----

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimum distance from any sub-centroid of class `c` to any sub-centroid of
/// another class, by exhaustive enumeration.
pub fn sub_min_literal(subs: &[Vec<Vec<f64>>]) -> Vec<f64> {
    (0..subs.len())
        .map(|c| {
            let mut best = f64::INFINITY;
            for (o, other) in subs.iter().enumerate() {
                if o == c {
                    continue;
                }
                for a in &subs[c] {
                    for b in other {
                        best = best.min(euclid(a, b));
                    }
                }
            }
            best
        })
        .collect()
}

/// Indices sorted by value, ties by index.
pub fn ranking(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}
