//! Experiment configuration (JSON). See `docs/config.md` for the schema.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::EnergyProfile;
use crate::coding::{CodingKind, CodingScheme, LayerRole, INPUT_THRESHOLD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    OutOfRange { key: String, message: String },
}

fn out_of_range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

/// On-disk shape; every field optional so missing keys can be named precisely.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<PathBuf>,
    normalized_model: Option<PathBuf>,
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    input_coding: Option<CodingKind>,
    hidden_coding: Option<CodingKind>,
    v_th: Option<f64>,
    time_steps: Option<usize>,
    target_accuracies: Option<Vec<f64>>,
    relative_targets_pp: Option<Vec<f64>>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    energy_profile: Option<OneOrMany>,
    energy_profile_ratios: Option<BTreeMap<String, [f64; 3]>>,
    output_dir: Option<PathBuf>,
    hidden_layers: Option<Vec<usize>>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    percentile: Option<f64>,
    calibration_size: Option<usize>,
    eval_subset: Option<usize>,
    record_fraction: Option<f64>,
    workers: Option<usize>,
    baseline_run: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "normalized_model",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "input_coding",
    "hidden_coding",
    "v_th",
    "time_steps",
    "target_accuracies",
    "relative_targets_pp",
    "batch_size",
    "seed",
    "energy_profile",
    "energy_profile_ratios",
    "output_dir",
    "hidden_layers",
    "learning_rate",
    "epochs",
    "percentile",
    "calibration_size",
    "eval_subset",
    "record_fraction",
    "workers",
    "baseline_run",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub normalized_model: PathBuf,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub input_coding: CodingScheme,
    pub hidden_coding: CodingScheme,
    pub v_th: f64,
    pub time_steps: usize,
    pub target_accuracies: Vec<f64>,
    /// Targets expressed as percentage points below the DNN accuracy.
    pub relative_targets_pp: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub energy_profiles: Vec<EnergyProfile>,
    pub output_dir: PathBuf,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub percentile: f64,
    pub calibration_size: Option<usize>,
    /// `None` evaluates the full test set.
    pub eval_subset: Option<usize>,
    pub record_fraction: f64,
    pub workers: usize,
    pub baseline_run: Option<PathBuf>,
}

pub const DEFAULT_EVAL_SUBSET: usize = 1000;
pub const DEFAULT_PERCENTILE: f64 = 99.9;
pub const DEFAULT_RECORD_FRACTION: f64 = 0.1;

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::Parse("top level must be an object".into()))?;
        if let Some(key) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        let raw: RawConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw, base_dir)
    }

    fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        fn req<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
            v.ok_or_else(|| ConfigError::MissingKey(key.to_string()))
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let model = resolve(req(raw.model, "model")?);
        let normalized_model = match raw.normalized_model {
            Some(p) => resolve(p),
            None => {
                let stem = model
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("model");
                model.with_file_name(format!("{stem}.normalized.json"))
            }
        };
        let test_images = resolve(req(raw.test_images, "test_images")?);
        let test_labels = resolve(req(raw.test_labels, "test_labels")?);
        let input_kind = req(raw.input_coding, "input_coding")?;
        let hidden_kind = req(raw.hidden_coding, "hidden_coding")?;
        let v_th = req(raw.v_th, "v_th")?;
        let time_steps = req(raw.time_steps, "time_steps")?;
        let seed = req(raw.seed, "seed")?;
        let output_dir = resolve(req(raw.output_dir, "output_dir")?);

        if !(v_th.is_finite() && v_th > 0.0) {
            return Err(out_of_range("v_th", format!("must be > 0, got {v_th}")));
        }
        if time_steps < 1 {
            return Err(out_of_range("time_steps", "must be >= 1"));
        }
        let input_coding = CodingScheme {
            kind: input_kind,
            v_th: INPUT_THRESHOLD,
        };
        input_coding
            .validate(LayerRole::Input)
            .map_err(|e| out_of_range("input_coding", e.to_string()))?;
        let hidden_coding = CodingScheme {
            kind: hidden_kind,
            v_th,
        };
        hidden_coding
            .validate(LayerRole::Hidden)
            .map_err(|e| out_of_range("hidden_coding", e.to_string()))?;

        // without any target, report the DNN accuracy minus one point
        let no_targets = raw.target_accuracies.is_none() && raw.relative_targets_pp.is_none();
        let target_accuracies = raw.target_accuracies.unwrap_or_default();
        if let Some(t) = target_accuracies
            .iter()
            .find(|t| !(**t > 0.0 && **t <= 1.0))
        {
            return Err(out_of_range(
                "target_accuracies",
                format!("{t} not in (0, 1]"),
            ));
        }
        let relative_targets_pp = match raw.relative_targets_pp {
            Some(v) => v,
            None if no_targets => vec![1.0],
            None => Vec::new(),
        };
        if let Some(t) = relative_targets_pp
            .iter()
            .find(|t| !(**t >= 0.0 && **t < 100.0))
        {
            return Err(out_of_range(
                "relative_targets_pp",
                format!("{t} not in [0, 100)"),
            ));
        }

        let batch_size = raw.batch_size.unwrap_or(32);
        if batch_size < 1 {
            return Err(out_of_range("batch_size", "must be >= 1"));
        }
        let epochs = raw.epochs.unwrap_or(10);
        if epochs < 1 {
            return Err(out_of_range("epochs", "must be >= 1"));
        }
        let learning_rate = raw.learning_rate.unwrap_or(0.05);
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(out_of_range("learning_rate", "must be > 0"));
        }
        let percentile = raw.percentile.unwrap_or(DEFAULT_PERCENTILE);
        if !(percentile > 0.0 && percentile <= 100.0) {
            return Err(out_of_range("percentile", "must be in (0, 100]"));
        }
        let record_fraction = raw.record_fraction.unwrap_or(DEFAULT_RECORD_FRACTION);
        if !(record_fraction > 0.0 && record_fraction <= 1.0) {
            return Err(out_of_range("record_fraction", "must be in (0, 1]"));
        }
        let hidden_layers = raw.hidden_layers.unwrap_or_else(|| vec![300]);
        if hidden_layers.contains(&0) {
            return Err(out_of_range("hidden_layers", "widths must be >= 1"));
        }
        if raw.calibration_size == Some(0) {
            return Err(out_of_range("calibration_size", "must be >= 1"));
        }
        let eval_subset = match raw.eval_subset {
            Some(0) => None,
            Some(n) => Some(n),
            None => Some(DEFAULT_EVAL_SUBSET),
        };

        let mut profiles = EnergyProfile::defaults();
        for (name, [c, r, s]) in raw.energy_profile_ratios.unwrap_or_default() {
            let p = EnergyProfile::new(&name, c, r, s)
                .map_err(|e| out_of_range("energy_profile_ratios", e.to_string()))?;
            match profiles.iter_mut().find(|q| q.name == name) {
                Some(q) => *q = p,
                None => profiles.push(p),
            }
        }
        let selected = match raw.energy_profile {
            None => profiles.iter().map(|p| p.name.clone()).collect(),
            Some(OneOrMany::One(n)) => vec![n],
            Some(OneOrMany::Many(v)) => v,
        };
        let mut energy_profiles = Vec::new();
        for name in &selected {
            let p = profiles.iter().find(|p| &p.name == name).ok_or_else(|| {
                out_of_range("energy_profile", format!("unknown profile `{name}`"))
            })?;
            energy_profiles.push(p.clone());
        }

        Ok(ExperimentConfig {
            model,
            normalized_model,
            train_images: raw.train_images.map(resolve),
            train_labels: raw.train_labels.map(resolve),
            test_images,
            test_labels,
            input_coding,
            hidden_coding,
            v_th,
            time_steps,
            target_accuracies,
            relative_targets_pp,
            batch_size,
            seed,
            energy_profiles,
            output_dir,
            hidden_layers,
            learning_rate,
            epochs,
            percentile,
            calibration_size: raw.calibration_size,
            eval_subset,
            record_fraction,
            workers: raw.workers.unwrap_or(0),
            baseline_run: raw.baseline_run.map(resolve),
        })
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // paths in the file are relative to the file itself; anchoring them to an
    // absolute base keeps them stable whatever directory outputs go to
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let base = std::path::absolute(parent).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_json(&text, &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_anchored_to_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("exp.json");
        fs::write(&file, base().to_string()).unwrap();
        // reach the same file through a path relative to the working directory
        let cwd = std::env::current_dir().unwrap();
        let mut rel = PathBuf::new();
        for _ in cwd.components().skip(1) {
            rel.push("..");
        }
        rel.push(file.strip_prefix("/").unwrap());
        let cfg = load_config(&rel).unwrap();
        assert!(cfg.model.is_absolute(), "{}", cfg.model.display());
        assert!(cfg.model.ends_with("models/mlp.json"));
        assert!(cfg.output_dir.is_absolute());
    }

    fn base() -> serde_json::Value {
        serde_json::json!({
            "model": "models/mlp.json",
            "test_images": "data/t10k-images-idx3-ubyte",
            "test_labels": "data/t10k-labels-idx1-ubyte",
            "input_coding": {"kind": "phase", "k": 8},
            "hidden_coding": {"kind": "burst", "beta": 2.0},
            "v_th": 0.125,
            "time_steps": 256,
            "target_accuracies": [0.97],
            "seed": 7,
            "output_dir": "runs/pb"
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_json(&v.to_string(), Path::new("/work"))
    }

    #[test]
    fn phase_burst_config_is_valid() {
        let c = parse(base()).unwrap();
        assert_eq!(c.input_coding.kind, CodingKind::Phase { k: 8 });
        assert_eq!(c.hidden_coding, CodingScheme::burst(2.0, 0.125));
        assert_eq!(c.v_th, 0.125);
        assert_eq!(c.model, PathBuf::from("/work/models/mlp.json"));
        assert_eq!(
            c.normalized_model,
            PathBuf::from("/work/models/mlp.normalized.json")
        );
        assert_eq!(c.eval_subset, Some(DEFAULT_EVAL_SUBSET));
        assert_eq!(c.energy_profiles.len(), 2);
    }

    #[test]
    fn zero_threshold_rejected() {
        let mut v = base();
        v["v_th"] = serde_json::json!(0.0);
        assert!(matches!(parse(v), Err(ConfigError::OutOfRange { key, .. }) if key == "v_th"));
    }

    #[test]
    fn missing_time_steps_named() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("time_steps");
        assert!(matches!(parse(v), Err(ConfigError::MissingKey(k)) if k == "time_steps"));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v = base();
        v["colour"] = serde_json::json!("blue");
        assert!(matches!(parse(v), Err(ConfigError::UnknownKey(k)) if k == "colour"));
    }

    #[test]
    fn zero_epochs_rejected() {
        let mut v = base();
        v["epochs"] = serde_json::json!(0);
        assert!(matches!(parse(v), Err(ConfigError::OutOfRange { key, .. }) if key == "epochs"));
    }

    #[test]
    fn hidden_real_and_bad_targets_rejected() {
        let mut v = base();
        v["hidden_coding"] = serde_json::json!({"kind": "real"});
        assert!(parse(v).is_err());
        let mut v = base();
        v["target_accuracies"] = serde_json::json!([0.0]);
        assert!(parse(v).is_err());
        let mut v = base();
        v["energy_profile"] = serde_json::json!("loihi-like");
        assert!(parse(v).is_err());
    }

    #[test]
    fn custom_energy_profile() {
        let mut v = base();
        v["energy_profile_ratios"] = serde_json::json!({"custom": [0.5, 0.25, 0.25]});
        v["energy_profile"] = serde_json::json!(["custom", "truenorth-like"]);
        let c = parse(v).unwrap();
        let names: Vec<_> = c.energy_profiles.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["custom", "truenorth-like"]);
    }

    #[test]
    fn arbitrary_documents_never_panic() {
        for text in [
            "",
            "[]",
            "{}",
            "null",
            "{\"v_th\": \"x\"}",
            "{\"model\": 3}",
        ] {
            assert!(ExperimentConfig::from_json(text, Path::new(".")).is_err());
        }
    }
}
