//! End-to-end runs: split, train, evaluate, and the on-disk run directory.
//!
//! A run directory holds:
//! - `config.toml`: the config file, byte for byte
//! - `run.json`: path of the feature file the run was trained on
//! - `split.json`: train/valid/test row indices
//! - `checkpoint.bin`: trained parameters
//! - `report.json`: epoch records, metrics and weight snapshots

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{
    load_checkpoint, load_config, load_features, make_split, report_to_json, save_checkpoint,
    RunReport, Split,
};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsSummary;
use crate::model::Model;
use crate::trainer::{evaluate, train_with_progress, EpochRecord, TrainConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "run.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub data: String,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub model: Model,
    pub split: Split,
    pub report: RunReport,
}

/// Splits `dataset`, trains on the train rows and scores valid and test.
pub fn run_training(
    dataset: &Dataset,
    config: &TrainConfig,
    config_text: &str,
    progress: impl FnMut(&EpochRecord),
) -> Result<RunArtifacts> {
    let split = make_split(dataset, &config.split, config.seed)?;
    let train_set = dataset.subset(&split.train)?;
    let outcome = train_with_progress(&train_set, config, progress)?;
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "valid".to_string(),
        evaluate(&outcome.model, dataset, &split.valid)?,
    );
    metrics.insert(
        "test".to_string(),
        evaluate(&outcome.model, dataset, &split.test)?,
    );
    Ok(RunArtifacts {
        model: outcome.model,
        split,
        report: RunReport {
            config: config_text.to_string(),
            epochs: outcome.epochs,
            metrics,
            weights: outcome.snapshots,
        },
    })
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_run(dir: &Path, data_path: &str, artifacts: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir.join(CONFIG_FILE), &artifacts.report.config)?;
    let manifest = RunManifest {
        data: data_path.to_string(),
    };
    write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    write(
        dir.join(SPLIT_FILE),
        serde_json::to_string(&artifacts.split)? + "\n",
    )?;
    save_checkpoint(&artifacts.model, &dir.join(CHECKPOINT_FILE))?;
    write(dir.join(REPORT_FILE), report_to_json(&artifacts.report)?)
}

/// Re-scores a saved run on one split of its feature file.
pub fn evaluate_run(dir: &Path, split_name: &str) -> Result<MetricsSummary> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: RunManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )?;
    let (config, _) = load_config(&dir.join(CONFIG_FILE))?;
    let model = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let dataset = load_features(Path::new(&manifest.data))?;
    let split = make_split(&dataset, &config.split, config.seed)?;
    let rows = split
        .get(split_name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split {split_name:?}")))?;
    evaluate(&model, &dataset, rows)
}
