//! Training schedule: contrastive warm-up, then periodic re-clustering and
//! weight updates interleaved with joint encoder/classifier epochs.
//!
//! Epochs are numbered from 1. Epochs `1..=warmup_epochs` train the encoder
//! with the plain supervised contrastive loss only. With `dynamic` on,
//! sub-clusters and class weights are recomputed at every epoch `t > T0` with
//! `(t - T0) % update_interval == 0`; with it off, once at `T0 + 1`. Every
//! post-warm-up epoch trains the classifier with weighted cross-entropy on
//! detached embeddings. The encoder uses the sub-cluster loss once an
//! assignment exists. Before the first update it keeps the plain contrastive
//! loss and the classifier uses the mode's neutral (equal-distance) weights.

use serde::{Deserialize, Serialize};

use crate::clustering::{subcluster_all, ClusterConfig, SubclusterAssignment};
use crate::data_io::SplitSpec;
use crate::domain::{Dataset, EmbeddingBatch, Matrix, RandomSource};
use crate::error::{Error, Result};
use crate::losses::{
    augment_view, scl_loss, subcluster_loss, weighted_cross_entropy, ContrastiveConfig,
};
use crate::metrics::{ConfusionMatrix, MetricsSummary};
use crate::model::{
    classifier_backward, classify, encode, encoder_backward, Adam, Model, ModelConfig,
};
use crate::reweighting::{inverse_frequency_weights, DistanceReport, ReweightMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub sigma: f64,
    pub dropout_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            dropout_p: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub encoder_lr: f64,
    pub classifier_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            encoder_lr: 1e-3,
            classifier_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub warmup_epochs: usize,
    pub update_interval: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Re-cluster every `update_interval` epochs; otherwise only once.
    pub dynamic: bool,
    pub reweight_mode: ReweightMode,
    pub model: ModelConfig,
    pub cluster: ClusterConfig,
    pub contrastive: ContrastiveConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup_epochs: 5,
            update_interval: 5,
            total_epochs: 100,
            batch_size: 128,
            dynamic: true,
            reweight_mode: ReweightMode::Combined,
            model: ModelConfig::default(),
            cluster: ClusterConfig::default(),
            contrastive: ContrastiveConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.total_epochs < 1 {
            return bad("total_epochs must be >= 1");
        }
        if self.warmup_epochs >= self.total_epochs {
            return bad("warmup_epochs must be smaller than total_epochs");
        }
        if self.update_interval < 1 {
            return bad("update_interval must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.model.hidden < 1 || self.model.embedding < 1 {
            return bad("model dimensions must be >= 1");
        }
        if !(self.augment.sigma >= 0.0 && (0.0..1.0).contains(&self.augment.dropout_p)) {
            return bad("augment needs sigma >= 0 and dropout_p in [0, 1)");
        }
        let lrs = [self.optimizer.encoder_lr, self.optimizer.classifier_lr];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        self.cluster.validate()?;
        self.contrastive.validate()?;
        self.split.validate()
    }

    /// Whether sub-clusters and weights are recomputed at the start of `epoch`.
    pub fn is_update_epoch(&self, epoch: usize) -> bool {
        if epoch <= self.warmup_epochs {
            return false;
        }
        let since = epoch - self.warmup_epochs;
        if self.dynamic {
            since.is_multiple_of(self.update_interval)
        } else {
            since == 1
        }
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub warmup: bool,
    /// Mean contrastive loss per batch.
    pub contrastive_loss: f64,
    /// Mean weighted cross-entropy per batch; absent during warm-up.
    pub classification_loss: Option<f64>,
    /// Class weights in force during this epoch.
    pub weights: Option<Vec<f64>>,
    pub cluster_counts: Option<Vec<usize>>,
    /// Sub-clusters were recomputed at the start of this epoch.
    pub reclustered: bool,
}

/// Weights computed at one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub epoch: usize,
    pub mode: ReweightMode,
    pub capacity: usize,
    pub cluster_counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub distances: Option<DistanceReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<WeightSnapshot>,
}

/// Embeds every row without augmentation.
pub fn embed_all(model: &Model, features: &Matrix) -> Result<Matrix> {
    Ok(encode(&model.encoder, features)?.0)
}

type WeightUpdate = (Vec<f64>, Option<DistanceReport>);

// Re-clusters the embedded training set and recomputes class weights. The
// assignment is returned even when the weight computation fails.
fn compute_update(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(SubclusterAssignment, Result<WeightUpdate>)> {
    let embeddings = embed_all(model, dataset.features())?;
    let cluster_config = ClusterConfig {
        seed: RandomSource::new(config.seed, "cluster-seed")
            .substream(&epoch.to_string())
            .next_u64(),
        ..config.cluster
    };
    let assignment = subcluster_all(
        &embeddings,
        dataset.labels(),
        dataset.num_classes(),
        &cluster_config,
    )?;
    let weights = match config.reweight_mode {
        ReweightMode::None => Ok((vec![1.0; dataset.num_classes()], None)),
        ReweightMode::InverseFrequency => {
            inverse_frequency_weights(dataset.class_counts()).map(|w| (w, None))
        }
        mode => DistanceReport::compute(&embeddings, dataset.labels(), &assignment).map(|r| {
            let w = r.weights_for(mode).expect("distance mode").to_vec();
            (w, Some(r))
        }),
    };
    Ok((assignment, weights))
}

/// Runs the full schedule on `dataset`. Deterministic given `config.seed`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = dataset.num_classes();
    let mut model = Model::init(dataset.dim(), &config.model, k, config.seed);
    let mut encoder_opt = Adam::new(config.optimizer.encoder_lr, &model.encoder);
    let mut classifier_opt = Adam::new(config.optimizer.classifier_lr, &model.classifier);
    let mut batch_rng = RandomSource::new(config.seed, "batch");
    let mut augment_rng = RandomSource::new(config.seed, "augment");

    let mut assignment: Option<SubclusterAssignment> = None;
    let mut weights: Option<Vec<f64>> = None;
    let mut retry_pending = false;
    let mut epochs = Vec::with_capacity(config.total_epochs);
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=config.total_epochs {
        let warmup = epoch <= config.warmup_epochs;
        let mut reclustered = false;
        if !warmup && (config.is_update_epoch(epoch) || retry_pending) {
            let (clusters, update) = compute_update(&model, dataset, config, epoch)?;
            reclustered = true;
            match update {
                Ok((w, distances)) => {
                    retry_pending = false;
                    snapshots.push(WeightSnapshot {
                        epoch,
                        mode: config.reweight_mode,
                        capacity: clusters.capacity,
                        cluster_counts: clusters.cluster_counts(),
                        weights: w.clone(),
                        distances,
                    });
                    weights = Some(w);
                }
                // One retry at the next epoch before giving up.
                Err(e) if e.is_zero_separation() && !retry_pending => {
                    retry_pending = true;
                }
                Err(e) => {
                    return Err(Error::NumericalAbort {
                        epoch,
                        source: Box::new(e),
                    })
                }
            }
            assignment = Some(clusters);
        }
        let class_weights = weights
            .clone()
            .unwrap_or_else(|| config.reweight_mode.neutral_weights(k));

        batch_rng.shuffle(&mut order);
        let mut contrastive_total = 0.0;
        let mut ce_total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let features = dataset.features().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
            let views = augment_view(
                &features,
                config.augment.sigma,
                config.augment.dropout_p,
                &mut augment_rng,
            );
            let (z, cache) = encode(&model.encoder, &features)?;
            let (z_aug, cache_aug) = encode(&model.encoder, &views)?;
            let batch = EmbeddingBatch::new(z.clone(), z_aug, labels.clone())?;
            let loss = match (&assignment, warmup) {
                (Some(a), false) => {
                    let ids = chunk.iter().map(|&i| a.cluster_of(i)).collect();
                    subcluster_loss(&batch.with_cluster_ids(ids)?, &config.contrastive)?
                }
                _ => scl_loss(&batch, &config.contrastive)?,
            };
            let mut grads = encoder_backward(&model.encoder, &cache, &loss.grad_anchors)?.params;
            let aug_grads = encoder_backward(&model.encoder, &cache_aug, &loss.grad_augmented)?;
            accumulate(&mut grads, &aug_grads.params);
            encoder_opt.step(&mut model.encoder, &grads)?;
            contrastive_total += loss.value;

            if !warmup {
                let logits = classify(&model.classifier, &z)?;
                let ce = weighted_cross_entropy(&logits, &labels, &class_weights)?;
                let (cls_grads, _) = classifier_backward(&model.classifier, &z, &ce.gradient)?;
                classifier_opt.step(&mut model.classifier, &cls_grads)?;
                ce_total += ce.value;
            }
            batches += 1;
        }

        let record = EpochRecord {
            epoch,
            warmup,
            contrastive_loss: contrastive_total / batches as f64,
            classification_loss: (!warmup).then(|| ce_total / batches as f64),
            weights: (!warmup).then(|| class_weights.clone()),
            cluster_counts: assignment.as_ref().map(|a| a.cluster_counts()),
            reclustered,
        };
        progress(&record);
        epochs.push(record);
    }
    Ok(TrainOutcome {
        model,
        epochs,
        snapshots,
    })
}

fn accumulate<P: crate::model::Parameters>(into: &mut P, other: &P) {
    for (a, b) in into.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Confusion matrix and balanced metrics of `model` on the given rows.
pub fn evaluate(model: &Model, dataset: &Dataset, rows: &[usize]) -> Result<MetricsSummary> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let features = dataset.features().select_rows(rows);
    let truth: Vec<usize> = rows.iter().map(|&i| dataset.labels()[i]).collect();
    let predicted = model.predict(&features)?;
    let cm = ConfusionMatrix::from_predictions(&truth, &predicted, dataset.num_classes())?;
    MetricsSummary::from_confusion(cm)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub warmup: bool,
    pub dynamic: bool,
    pub mode: ReweightMode,
}

impl Variant {
    pub fn full() -> Self {
        Self {
            warmup: true,
            dynamic: true,
            mode: ReweightMode::Combined,
        }
    }

    /// `base` with this variant's switches; warm-up off means zero warm-up epochs.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            warmup_epochs: if self.warmup { base.warmup_epochs } else { 0 },
            dynamic: self.dynamic,
            reweight_mode: self.mode,
            ..base.clone()
        }
    }

    pub fn name(&self) -> String {
        format!(
            "warmup={} dynamic={} reweight={}",
            if self.warmup { "on" } else { "off" },
            if self.dynamic { "on" } else { "off" },
            self.mode.label()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub balanced_accuracy: f64,
    pub balanced_f1: f64,
}

/// Warm-up × dynamic × the four distance-weighting modes, all with `base.seed`.
pub fn ablation_grid() -> Vec<Variant> {
    let mut out = Vec::new();
    for warmup in [true, false] {
        for dynamic in [true, false] {
            for mode in ReweightMode::DISTANCE_MODES {
                out.push(Variant {
                    warmup,
                    dynamic,
                    mode,
                });
            }
        }
    }
    out
}

/// Trains each variant on `train_set` and scores it on `eval_set`, using at
/// most `threads` worker threads. Row order follows `variants`.
pub fn run_ablation_suite(
    train_set: &Dataset,
    eval_set: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let eval_rows: Vec<usize> = (0..eval_set.len()).collect();
    let run_one = |v: &Variant| -> Result<AblationRow> {
        let outcome = train(train_set, &v.apply(base))?;
        let m = evaluate(&outcome.model, eval_set, &eval_rows)?;
        Ok(AblationRow {
            variant: *v,
            balanced_accuracy: m.balanced_accuracy,
            balanced_f1: m.balanced_f1,
        })
    };
    let threads = threads.max(1).min(variants.len().max(1));
    if threads == 1 {
        return variants.iter().map(run_one).collect();
    }
    let mut results: Vec<Option<Result<AblationRow>>> = (0..variants.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let run_one = &run_one;
                scope.spawn(move || {
                    (t..variants.len())
                        .step_by(threads)
                        .map(|i| (i, run_one(&variants[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("ablation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every variant ran"))
        .collect()
}

/// Plain-text comparison table.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("warmup\tdynamic\treweight\tbalanced_accuracy\tbalanced_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\n",
            if r.variant.warmup { "yes" } else { "no" },
            if r.variant.dynamic { "yes" } else { "no" },
            r.variant.mode.label(),
            r.balanced_accuracy,
            r.balanced_f1
        ));
    }
    out
}
