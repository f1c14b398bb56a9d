//! Capacity-capped sub-clustering of each class on the unit sphere.
//!
//! Every class is split into `ceil(n_c / U)` clusters where `U` is the larger
//! of the smallest class size and `delta`. Assignment is greedy: the globally
//! most cosine-similar (sample, open center) pair is committed first, and a
//! center stops accepting samples once it holds `U` of them. Centers are then
//! moved to the re-normalized mean of their members and the greedy pass is
//! repeated, for a fixed number of iterations.

use serde::{Deserialize, Serialize};

use crate::domain::{dot, ensure_unit_rows, unit_normalize, Matrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Lower bound on the cluster capacity.
    pub delta: usize,
    /// Number of assign/update rounds.
    pub iterations: usize,
    /// Set by the caller per clustering pass; not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            delta: 10,
            iterations: 10,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 1 {
            return Err(Error::InvalidConfig("cluster delta must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig(
                "cluster iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `U = max(min_c n_c, delta)`.
pub fn capacity_threshold(class_counts: &[usize], delta: usize) -> Result<usize> {
    let smallest = class_counts
        .iter()
        .copied()
        .min()
        .ok_or_else(|| Error::InvalidArgument("empty class list".into()))?;
    if smallest == 0 {
        return Err(Error::InvalidArgument("class with zero samples".into()));
    }
    Ok(smallest.max(delta))
}

/// Clusters of one class, indexed by the row order of the input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassClusters {
    /// Cluster index for each input row.
    pub assignment: Vec<usize>,
    /// Unit-length cluster centers.
    pub centroids: Matrix,
    pub sizes: Vec<usize>,
}

impl ClassClusters {
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }
}

/// Splits one class into `ceil(n / capacity)` clusters of at most `capacity`
/// members each. `rng` only chooses the first seed point.
pub fn subcluster_class(
    features: &Matrix,
    iterations: usize,
    capacity: usize,
    rng: &mut RandomSource,
) -> Result<ClassClusters> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot cluster an empty class".into(),
        ));
    }
    if capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be >= 1".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    ensure_unit_rows(features)?;

    let m = n.div_ceil(capacity);
    assert!(m * capacity >= n);

    if m == 1 {
        let all = vec![0; n];
        let first = features.row(0).to_vec();
        let centroid = mean_direction(features, &all, 0, &first);
        return Ok(ClassClusters {
            assignment: all,
            centroids: Matrix::from_rows(&[centroid])?,
            sizes: vec![n],
        });
    }

    let mut centers = farthest_point_seeds(features, m, rng);
    let mut assignment = greedy_assign(features, &centers, capacity);
    for _ in 1..iterations {
        centers = update_centers(features, &assignment, &centers);
        assignment = greedy_assign(features, &centers, capacity);
    }
    let centroids = update_centers(features, &assignment, &centers);

    let mut sizes = vec![0usize; m];
    for &a in &assignment {
        sizes[a] += 1;
    }
    // m = ceil(n / U) leaves no room for an empty cluster: the others could hold
    // at most (m - 1) U < n samples.
    debug_assert!(sizes.iter().all(|&s| s >= 1 && s <= capacity));

    Ok(ClassClusters {
        assignment,
        centroids,
        sizes,
    })
}

/// Greedy farthest-point seeding under cosine distance, starting from a
/// random sample. Ties go to the lowest sample index.
fn farthest_point_seeds(features: &Matrix, m: usize, rng: &mut RandomSource) -> Matrix {
    let n = features.rows();
    let first = rng.index(n);
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| 1.0 - dot(features.row(i), features.row(first)))
        .collect();
    while chosen.len() < m {
        let mut best = 0;
        for i in 1..n {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let di = 1.0 - dot(features.row(i), features.row(best));
            if di < *d {
                *d = di;
            }
        }
    }
    features.select_rows(&chosen)
}

/// One greedy capacity-capped assignment pass. Similarities do not change as
/// samples and centers are removed, so extracting the maximum repeatedly is the
/// same as walking all pairs in descending order and skipping used samples and
/// closed centers.
fn greedy_assign(features: &Matrix, centers: &Matrix, capacity: usize) -> Vec<usize> {
    let n = features.rows();
    let m = centers.rows();
    let mut pairs: Vec<(f64, u32, u32)> = Vec::with_capacity(n * m);
    for i in 0..n {
        let z = features.row(i);
        for j in 0..m {
            pairs.push((dot(z, centers.row(j)), i as u32, j as u32));
        }
    }
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut assignment = vec![usize::MAX; n];
    let mut sizes = vec![0usize; m];
    let mut remaining = n;
    for (_, i, j) in pairs {
        let (i, j) = (i as usize, j as usize);
        if assignment[i] != usize::MAX || sizes[j] >= capacity {
            continue;
        }
        assignment[i] = j;
        sizes[j] += 1;
        remaining -= 1;
        if remaining == 0 {
            break;
        }
    }
    assert_eq!(remaining, 0, "capacity-feasible partition must exist");
    assignment
}

fn update_centers(features: &Matrix, assignment: &[usize], previous: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(previous.rows(), previous.cols());
    for j in 0..previous.rows() {
        let c = mean_direction(features, assignment, j, previous.row(j));
        out.row_mut(j).copy_from_slice(&c);
    }
    out
}

// Normalized mean of cluster `j`; keeps `fallback` when the mean vanishes or
// the cluster is empty.
fn mean_direction(features: &Matrix, assignment: &[usize], j: usize, fallback: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; features.cols()];
    for (i, _) in assignment.iter().enumerate().filter(|(_, &a)| a == j) {
        for (s, x) in sum.iter_mut().zip(features.row(i)) {
            *s += x;
        }
    }
    unit_normalize(&sum).unwrap_or_else(|_| fallback.to_vec())
}

/// Sub-clusters of one class, keyed by dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSubclusters {
    /// Dataset rows of this class, ascending.
    pub members: Vec<usize>,
    pub clusters: ClassClusters,
}

/// Sub-cluster partition of every class under a shared capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterAssignment {
    pub capacity: usize,
    pub classes: Vec<ClassSubclusters>,
    /// Class-local cluster index for every dataset row.
    pub sample_cluster: Vec<usize>,
}

impl SubclusterAssignment {
    pub fn cluster_counts(&self) -> Vec<usize> {
        self.classes
            .iter()
            .map(|c| c.clusters.cluster_count())
            .collect()
    }

    pub fn cluster_of(&self, row: usize) -> usize {
        self.sample_cluster[row]
    }

    pub fn max_cluster_size(&self) -> usize {
        self.classes
            .iter()
            .flat_map(|c| c.clusters.sizes.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Dataset rows of each cluster of class `c`.
    pub fn cluster_members(&self, c: usize) -> Vec<Vec<usize>> {
        let class = &self.classes[c];
        let mut out = vec![Vec::new(); class.clusters.cluster_count()];
        for (&row, &k) in class.members.iter().zip(&class.clusters.assignment) {
            out[k].push(row);
        }
        out
    }
}

/// Clusters every class of `embeddings` (unit rows) with one capacity derived
/// from the class sizes.
pub fn subcluster_all(
    embeddings: &Matrix,
    labels: &[usize],
    num_classes: usize,
    config: &ClusterConfig,
) -> Result<SubclusterAssignment> {
    config.validate()?;
    if embeddings.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings for {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        members[y].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let capacity = capacity_threshold(&counts, config.delta)?;

    let root = RandomSource::new(config.seed, "cluster-seed");
    let mut sample_cluster = vec![0usize; labels.len()];
    let mut classes = Vec::with_capacity(num_classes);
    for (c, rows) in members.into_iter().enumerate() {
        let feats = embeddings.select_rows(&rows);
        let mut rng = root.substream(&c.to_string());
        let clusters = subcluster_class(&feats, config.iterations, capacity, &mut rng)?;
        for (&row, &k) in rows.iter().zip(&clusters.assignment) {
            sample_cluster[row] = k;
        }
        classes.push(ClassSubclusters {
            members: rows,
            clusters,
        });
    }
    Ok(SubclusterAssignment {
        capacity,
        classes,
        sample_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit_rows(n: usize, e: usize, seed: u64) -> Matrix {
        let mut rng = RandomSource::new(seed, "test");
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..e).map(|_| rng.gaussian()).collect();
                unit_normalize(&v).unwrap()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(capacity_threshold(&[100, 40, 7], 10).unwrap(), 10);
        assert_eq!(capacity_threshold(&[100, 40, 7], 5).unwrap(), 7);
        assert_eq!(capacity_threshold(&[5, 5], 5).unwrap(), 5);
        assert!(capacity_threshold(&[], 5).is_err());
    }

    #[test]
    fn small_class_is_single_cluster() {
        let f = random_unit_rows(7, 3, 1);
        let mut rng = RandomSource::new(0, "cluster-seed");
        let out = subcluster_class(&f, 3, 10, &mut rng).unwrap();
        assert_eq!(out.sizes, vec![7]);
        assert!(out.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_obvious_groups() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        for seed in 0..8 {
            let mut rng = RandomSource::new(seed, "cluster-seed");
            let out = subcluster_class(&f, 2, 2, &mut rng).unwrap();
            let a = &out.assignment;
            assert_eq!(a[0], a[1]);
            assert_eq!(a[2], a[3]);
            assert_ne!(a[0], a[2]);
            assert_eq!(out.centroids.row(a[0]), &[1.0, 0.0]);
            assert_eq!(out.centroids.row(a[2]), &[0.0, 1.0]);
        }
    }

    #[test]
    fn twenty_three_under_cap_ten() {
        let f = random_unit_rows(23, 4, 9);
        let mut rng = RandomSource::new(3, "cluster-seed");
        let out = subcluster_class(&f, 5, 10, &mut rng).unwrap();
        assert_eq!(out.cluster_count(), 3);
        assert_eq!(out.sizes.iter().sum::<usize>(), 23);
        assert!(out.sizes.iter().all(|&s| (1..=10).contains(&s)));
        for r in 0..3 {
            let n: f64 = out.centroids.row(r).iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_unit_rows() {
        let f = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let mut rng = RandomSource::new(0, "x");
        assert!(matches!(
            subcluster_class(&f, 1, 1, &mut rng),
            Err(Error::NotUnit { .. })
        ));
    }

    fn labels_for(counts: &[usize]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn cluster_counts_follow_ceiling() {
        let counts = [50, 20, 8];
        let labels = labels_for(&counts);
        let emb = random_unit_rows(labels.len(), 5, 2);
        let cfg = ClusterConfig {
            delta: 8,
            iterations: 3,
            seed: 1,
        };
        let out = subcluster_all(&emb, &labels, 3, &cfg).unwrap();
        assert_eq!(out.capacity, 8);
        assert_eq!(out.cluster_counts(), vec![7, 3, 1]);

        let counts = [30, 10];
        let labels = labels_for(&counts);
        let emb = random_unit_rows(labels.len(), 5, 3);
        let cfg = ClusterConfig { delta: 5, ..cfg };
        let out = subcluster_all(&emb, &labels, 2, &cfg).unwrap();
        assert_eq!(out.capacity, 10);
        assert_eq!(out.cluster_counts(), vec![3, 1]);
        assert!(out.max_cluster_size() <= 10);
    }

    #[test]
    fn all_small_classes_stay_whole() {
        let labels = labels_for(&[4, 6, 3]);
        let emb = random_unit_rows(labels.len(), 3, 4);
        let cfg = ClusterConfig {
            delta: 6,
            iterations: 2,
            seed: 0,
        };
        let out = subcluster_all(&emb, &labels, 3, &cfg).unwrap();
        assert_eq!(out.cluster_counts(), vec![1, 1, 1]);
        assert!(out.sample_cluster.iter().all(|&k| k == 0));
    }
}
