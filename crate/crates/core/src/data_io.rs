//! Dataset generation and ingestion, train/valid/test splits, and on-disk
//! formats for configs, run reports and checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Matrix, RandomSource};
use crate::error::{Error, Result};
use crate::metrics::MetricsSummary;
use crate::model::{ClassifierParams, EncoderParams, Model};
use crate::trainer::{EpochRecord, TrainConfig, WeightSnapshot};

/// Long-tailed Gaussian mixture: class `c` holds
/// `round(n_max * R^(-c / (K - 1)))` samples drawn around `modes` centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
    /// Per-coordinate standard deviation of samples around their mode.
    #[serde(default = "default_within")]
    pub within_spread: f64,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Per-coordinate standard deviation of class anchors; mode centers scatter
    /// around their anchor with half of it. Smaller values mean more overlap.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_within() -> f64 {
    1.0
}

fn default_modes() -> usize {
    1
}

fn default_separation() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("at least 2 classes required".into()));
        }
        if self.dim < 1 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if !(self.imbalance_ratio.is_finite() && self.imbalance_ratio >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "imbalance ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        if self.modes < 1 {
            return Err(Error::InvalidConfig("modes must be >= 1".into()));
        }
        if !(self.within_spread >= 0.0 && self.separation >= 0.0) {
            return Err(Error::InvalidConfig("spreads must be nonnegative".into()));
        }
        Ok(())
    }

    /// Geometric size profile from `n_max` down to `n_max / R`.
    pub fn class_sizes(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let k = self.classes;
        let sizes: Vec<usize> = (0..k)
            .map(|c| {
                let exponent = -(c as f64) / (k - 1) as f64;
                (self.n_max as f64 * self.imbalance_ratio.powf(exponent)).round() as usize
            })
            .collect();
        if sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "ratio too extreme for n_max: smallest class would have {} samples",
                sizes.iter().min().unwrap()
            )));
        }
        Ok(sizes)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let sizes = spec.class_sizes()?;
    let modes = mixture_modes(spec);
    sample_mixture(
        spec,
        &modes,
        &sizes,
        RandomSource::new(spec.seed, "synthetic/samples"),
    )
}

/// Fresh draw of `per_class` samples per class from the same mixture as
/// [`generate_synthetic`]; `label` selects an independent sample stream.
pub fn sample_balanced(spec: &SyntheticSpec, per_class: usize, label: &str) -> Result<Dataset> {
    spec.validate()?;
    if per_class < 1 {
        return Err(Error::InvalidConfig("per_class must be >= 1".into()));
    }
    let modes = mixture_modes(spec);
    let rng = RandomSource::new(spec.seed, "synthetic/samples").substream(label);
    sample_mixture(spec, &modes, &vec![per_class; spec.classes], rng)
}

// modes[c][m] = center of mode m of class c.
fn mixture_modes(spec: &SyntheticSpec) -> Vec<Vec<Vec<f64>>> {
    let d = spec.dim;
    let mut rng = RandomSource::new(spec.seed, "synthetic/centers");
    let mut modes = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let anchor: Vec<f64> = (0..d).map(|_| spec.separation * rng.gaussian()).collect();
        let class_modes = if spec.modes == 1 {
            vec![anchor]
        } else {
            (0..spec.modes)
                .map(|_| {
                    anchor
                        .iter()
                        .map(|a| a + 0.5 * spec.separation * rng.gaussian())
                        .collect()
                })
                .collect()
        };
        modes.push(class_modes);
    }
    modes
}

fn sample_mixture(
    spec: &SyntheticSpec,
    modes: &[Vec<Vec<f64>>],
    sizes: &[usize],
    mut rng: RandomSource,
) -> Result<Dataset> {
    let d = spec.dim;
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            let mode = &modes[c][rng.index(spec.modes)];
            data.extend(mode.iter().map(|m| m + spec.within_spread * rng.gaussian()));
            labels.push(c);
        }
    }
    let ids = (0..total).map(|i| format!("s{i}")).collect();
    Dataset::new(
        Matrix::from_vec(total, d, data)?,
        labels,
        ids,
        Some(spec.classes),
    )
}

/// Reads `id,label,f0,...,f{d-1}` CSV.
pub fn load_features(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, &path.display().to_string())
}

pub fn parse_features(text: &str, source: &str) -> Result<Dataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.len() < 3 || columns[0] != "id" || columns[1] != "label" {
        return Err(err(1, "header must be id,label,f0,...".into()));
    }
    let d = columns.len() - 2;
    for (j, col) in columns[2..].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(err(1, format!("expected column f{j}, found {col:?}")));
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (line_no, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(err(
                line_no,
                format!("expected {} fields, found {}", d + 2, fields.len()),
            ));
        }
        let label: usize = fields[1].trim().parse().map_err(|_| {
            err(
                line_no,
                format!("label {:?} is not a nonnegative integer", fields[1]),
            )
        })?;
        for (j, f) in fields[2..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(line_no, format!("feature f{j} {f:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("feature f{j} is not finite")));
            }
            data.push(v);
        }
        ids.push(fields[0].to_string());
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(err(1, "no samples".into()));
    }
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, ids, None)
}

pub fn features_to_csv(dataset: &Dataset) -> String {
    let mut out = String::from("id,label");
    for j in 0..dataset.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (i, row) in dataset.features().iter_rows().enumerate() {
        let _ = write!(out, "{},{}", dataset.ids()[i], dataset.labels()[i]);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_features(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, features_to_csv(dataset)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Shuffled split by fractions, no stratification.
    Random,
    /// Equal per-class counts in valid and test.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    /// Falls back to the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Random,
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.valid, self.test];
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidConfig(
                "split fractions must be positive".into(),
            ));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index sets, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn make_split(dataset: &Dataset, spec: &SplitSpec, default_seed: u64) -> Result<Split> {
    spec.validate()?;
    let rng = RandomSource::new(spec.seed.unwrap_or(default_seed), "split");
    let mut split = match spec.mode {
        SplitMode::Random => {
            let n = dataset.len();
            let mut order: Vec<usize> = (0..n).collect();
            rng.clone().shuffle(&mut order);
            let n_valid = (spec.valid * n as f64).round() as usize;
            let n_test = (spec.test * n as f64).round() as usize;
            if n_valid + n_test >= n {
                return Err(Error::InvalidArgument(format!(
                    "{n} samples cannot fill the requested split"
                )));
            }
            let test = order[..n_test].to_vec();
            let valid = order[n_test..n_test + n_valid].to_vec();
            let train = order[n_test + n_valid..].to_vec();
            Split { train, valid, test }
        }
        SplitMode::Standard => {
            let n_min = *dataset.class_counts().iter().min().unwrap();
            let n_test = (spec.test * n_min as f64).floor() as usize;
            let n_valid = (spec.valid * n_min as f64).floor() as usize;
            if n_test == 0 || n_valid == 0 {
                return Err(Error::InvalidArgument(format!(
                    "standard split needs more samples: smallest class has {n_min}"
                )));
            }
            let mut split = Split {
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for (c, mut rows) in dataset.indices_by_class().into_iter().enumerate() {
                rng.substream(&c.to_string()).shuffle(&mut rows);
                split.test.extend_from_slice(&rows[..n_test]);
                split
                    .valid
                    .extend_from_slice(&rows[n_test..n_test + n_valid]);
                split.train.extend_from_slice(&rows[n_test + n_valid..]);
            }
            split
        }
    };
    split.train.sort_unstable();
    split.valid.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Parses a TOML run configuration. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let config: TrainConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// Returns the parsed config and the exact file text.
pub fn load_config(path: &Path) -> Result<(TrainConfig, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok((parse_config(&text)?, text))
}

/// Everything a training run reports. The `config` field is the verbatim
/// config file text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub config: String,
    pub epochs: Vec<EpochRecord>,
    pub metrics: BTreeMap<String, MetricsSummary>,
    pub weights: Vec<WeightSnapshot>,
}

pub fn report_to_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, report_to_json(report)?).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SUBT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `SUBT`, version, then input/hidden/embedding/classes as u32 and every
/// parameter tensor as little-endian f64 in the order w1, b1, w2, b2, w, b.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let enc = &model.encoder;
    let cls = &model.classifier;
    let dims = [
        enc.input_dim(),
        enc.hidden_dim(),
        enc.embedding_dim(),
        cls.num_classes(),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let tensors: [&[f64]; 6] = [
        enc.w1.as_slice(),
        &enc.b1,
        enc.w2.as_slice(),
        &enc.b2,
        cls.w.as_slice(),
        &cls.b,
    ];
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing SUBT magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 24 {
        return Err(Error::Format("truncated dimension header".into()));
    }
    let dim =
        |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (d, h, e, k) = (dim(0), dim(1), dim(2), dim(3));
    let sizes = [h * d, h, e * h, e, k * e, k];
    let expected = 24 + 8 * sizes.iter().sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for dims ({d}, {h}, {e}, {k}), found {}",
            bytes.len()
        )));
    }
    let mut offset = 24;
    let mut take = |n: usize| -> Vec<f64> {
        let v = bytes[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 8 * n;
        v
    };
    let w1 = Matrix::from_vec(h, d, take(sizes[0]))?;
    let b1 = take(sizes[1]);
    let w2 = Matrix::from_vec(e, h, take(sizes[2]))?;
    let b2 = take(sizes[3]);
    let w = Matrix::from_vec(k, e, take(sizes[4]))?;
    let b = take(sizes[5]);
    Ok(Model {
        encoder: EncoderParams { w1, b1, w2, b2 },
        classifier: ClassifierParams { w, b },
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn spec(k: usize, n_max: usize, ratio: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes: k,
            dim: 4,
            n_max,
            imbalance_ratio: ratio,
            within_spread: 1.0,
            modes: 2,
            separation: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn size_profile() {
        let s = spec(10, 1000, 65.78).class_sizes().unwrap();
        assert_eq!(s[0], 1000);
        assert_eq!(s[9], 15);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(spec(4, 50, 1.0).class_sizes().unwrap(), vec![50; 4]);
        assert!(spec(5, 10, 20.0).class_sizes().is_err());
    }

    #[test]
    fn achieved_ratio_close_to_requested() {
        for ratio in [2.0, 10.0, 27.5, 36.77, 65.78, 100.0] {
            for n_max in [500, 1000, 2000] {
                let s = spec(10, n_max, ratio).class_sizes().unwrap();
                let achieved = s[0] as f64 / s[9] as f64;
                assert!(
                    (achieved / ratio - 1.0).abs() <= 0.05,
                    "{ratio} {n_max} {achieved}"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&spec(3, 40, 4.0)).unwrap();
        let b = generate_synthetic(&spec(3, 40, 4.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), &[40, 20, 10]);
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&spec(3, 10, 2.0)).unwrap();
        let back = parse_features(&features_to_csv(&ds), "mem").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_errors() {
        let ok = "id,label,f0,f1\na,0,1.0,2.0\nb,1,3.0,4.0\nc,1,0.5,0.5\n";
        assert_eq!(parse_features(ok, "x").unwrap().len(), 3);

        let ragged = "id,label,f0,f1\na,0,1.0,2.0\nb,1,3.0\n";
        match parse_features(ragged, "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad = "id,label,f0\na,0,abc\nb,1,1\n";
        assert!(matches!(
            parse_features(bad, "x"),
            Err(Error::Parse { line: 2, .. })
        ));
        let gap = "id,label,f0\na,0,1\nb,2,1\n";
        let e = parse_features(gap, "x").unwrap_err();
        assert!(e.to_string().contains("non-contiguous labels"));
        let header = "id,class,f0\na,0,1\n";
        assert!(matches!(
            parse_features(header, "x"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn random_split_sizes() {
        let ds = generate_synthetic(&SyntheticSpec {
            classes: 2,
            n_max: 50,
            imbalance_ratio: 1.0,
            ..spec(2, 50, 1.0)
        })
        .unwrap();
        assert_eq!(ds.len(), 100);
        let s = make_split(&ds, &SplitSpec::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, make_split(&ds, &SplitSpec::default(), 1).unwrap());
    }

    #[test]
    fn standard_split_is_balanced() {
        let ds = generate_synthetic(&spec(4, 100, 5.0)).unwrap();
        let st = SplitSpec {
            mode: SplitMode::Standard,
            train: 0.6,
            valid: 0.2,
            test: 0.2,
            seed: Some(9),
        };
        let s = make_split(&ds, &st, 0).unwrap();
        let per_class = |idx: &[usize]| {
            let mut c = vec![0; 4];
            idx.iter().for_each(|&i| c[ds.labels()[i]] += 1);
            c
        };
        assert_eq!(per_class(&s.test), vec![4; 4]);
        assert_eq!(per_class(&s.valid), vec![4; 4]);

        let tiny = SplitSpec {
            test: 0.01,
            train: 0.79,
            ..st
        };
        assert!(make_split(&ds, &tiny, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = Model::init(
            5,
            &ModelConfig {
                hidden: 6,
                embedding: 3,
            },
            4,
            11,
        );
        let bytes = checkpoint_bytes(&m);
        assert_eq!(&bytes[..4], b"SUBT");
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            checkpoint_from_bytes(&wrong_version),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bad_magic),
            Err(Error::Format(_))
        ));
    }
}
