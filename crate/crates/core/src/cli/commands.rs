//! `train`, `normalize` and `run`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::analysis::{
    burst_composition, firing_stats, isi_histogram, normalized_energy, RunMetrics, TargetResult,
    BURST_BUCKETS,
};
use crate::coding::CodingKind;
use crate::dnn::{
    accuracy, init_params, normalize_model, predict_all, record_activations, train, TrainSettings,
};
use crate::model_io::{
    load_mnist, load_model, save_model, Dataset, ExperimentConfig, LayeredModel, Split,
};
use crate::snn::{convert, evaluate, EvalSettings, RecordConfig};

use super::analyze::{read_summary, SummaryRow};
use super::output::{fmt_float, OutputSet, RunManifest, RUN_MANIFEST};
use super::CliError;

pub const TRAIN_MANIFEST: &str = "train_manifest.json";
pub const NORMALIZE_MANIFEST: &str = "normalize_manifest.json";
pub const INFERENCE_CURVE_FILE: &str = "inference_curve.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FIRING_STATS_FILE: &str = "firing_stats.csv";
pub const ISIH_FILE: &str = "isih.csv";
pub const BURST_COMPOSITION_FILE: &str = "burst_composition.csv";

const NUM_CLASSES: usize = 10;

fn manifest(
    command: &str,
    cfg: &ExperimentConfig,
    started: Instant,
    results: serde_json::Value,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        files: Vec::new(),
        duration_secs: started.elapsed().as_secs_f64(),
        results,
    }
}

fn load_split(images: &Path, labels: &Path, split: Split) -> Result<Dataset, CliError> {
    load_mnist(images, labels, split).map_err(|e| CliError::Validation(e.to_string()))
}

fn train_set(cfg: &ExperimentConfig, purpose: &str) -> Result<Dataset, CliError> {
    match (&cfg.train_images, &cfg.train_labels) {
        (Some(i), Some(l)) => load_split(i, l, Split::Train),
        _ => Err(CliError::Validation(format!(
            "{purpose} needs `train_images` and `train_labels` in the config"
        ))),
    }
}

fn test_set(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    load_split(&cfg.test_images, &cfg.test_labels, Split::Test)
}

fn input_model(path: &Path) -> Result<LayeredModel, CliError> {
    load_model(path).map_err(|e| CliError::Validation(e.to_string()))
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_model(out: &mut OutputSet, model: &LayeredModel, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let path = out.track(path);
    save_model(model, &path).map_err(runtime)
}

/// Trains an MLP (`input → hidden_layers → 10`) and writes it to `cfg.model`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let data = train_set(cfg, "train")?;
    let test = test_set(cfg)?;
    let mut widths = vec![data.rows * data.cols];
    widths.extend(&cfg.hidden_layers);
    widths.push(NUM_CLASSES);
    let mut model = LayeredModel::mlp(&widths);
    init_params(&mut model, cfg.seed);
    let settings = TrainSettings {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..TrainSettings::default()
    };
    log::info!(
        "training {widths:?} for {} epochs on {} samples",
        cfg.epochs,
        data.len()
    );
    let (model, report) = train(&model, &data, &settings).map_err(runtime)?;
    let test_accuracy = accuracy(&model, &test.images, &test.labels).map_err(runtime)?;
    log::info!("test accuracy {test_accuracy}");

    let mut out = OutputSet::new(&cfg.output_dir)?;
    write_model(&mut out, &model, &cfg.model)?;
    let results = json!({
        "architecture": widths,
        "epoch_losses": report.epoch_losses,
        "train_accuracy": report.final_train_accuracy,
        "test_accuracy": test_accuracy,
    });
    out.finish(TRAIN_MANIFEST, manifest("train", cfg, started, results))
}

/// Normalizes `cfg.model` on the calibration set and writes
/// `cfg.normalized_model`, after checking that test-set predictions are unchanged.
pub fn cmd_normalize(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let model = input_model(&cfg.model)?;
    let calib = train_set(cfg, "normalize (calibration)")?;
    let n = cfg.calibration_size.unwrap_or(calib.len()).min(calib.len());
    let test = test_set(cfg)?;

    let trace = record_activations(&model, &calib.images[..n], cfg.percentile).map_err(runtime)?;
    let normalized = normalize_model(&model, &trace).map_err(runtime)?;
    let before = predict_all(&model, &test.images).map_err(runtime)?;
    let after = predict_all(&normalized, &test.images).map_err(runtime)?;
    let mismatches = before.iter().zip(&after).filter(|(a, b)| a != b).count();
    log::info!(
        "normalization scales {:?}; {mismatches} prediction mismatches",
        trace.scales()
    );
    if mismatches > 0 {
        return Err(CliError::Runtime(format!(
            "normalization changed {mismatches} of {} test predictions",
            test.len()
        )));
    }
    let correct = after
        .iter()
        .zip(&test.labels)
        .filter(|(p, l)| p == l)
        .count();

    let mut out = OutputSet::new(&cfg.output_dir)?;
    write_model(&mut out, &normalized, &cfg.normalized_model)?;
    let results = json!({
        "percentile": cfg.percentile,
        "calibration_samples": n,
        "scales": trace.scales(),
        "prediction_mismatches": mismatches,
        "test_accuracy": correct as f64 / test.len().max(1) as f64,
    });
    out.finish(
        NORMALIZE_MANIFEST,
        manifest("normalize", cfg, started, results),
    )
}

/// Concrete target accuracies: absolute ones plus `dnn − pp/100` for each
/// relative target.
pub fn resolve_targets(cfg: &ExperimentConfig, dnn_accuracy: f64) -> Vec<f64> {
    let mut targets = cfg.target_accuracies.clone();
    targets.extend(
        cfg.relative_targets_pp
            .iter()
            .map(|pp| dnn_accuracy - pp / 100.0),
    );
    targets
}

/// Simulates the evaluation set and writes all run CSVs plus `manifest.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let model = input_model(&cfg.normalized_model)?;
    let test = test_set(cfg)?;
    let n = cfg.eval_subset.unwrap_or(test.len()).min(test.len());
    let eval = test.head(n);
    let baseline = cfg.baseline_run.as_deref().map(read_summary).transpose()?;

    let net = convert(&model, cfg.input_coding, cfg.hidden_coding)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let settings = EvalSettings {
        time_steps: cfg.time_steps,
        record: RecordConfig::fraction(cfg.record_fraction),
        workers: cfg.workers,
    };
    let dnn_accuracy = super::with_workers(cfg.workers, || {
        accuracy(&model, &eval.images, &eval.labels).map_err(runtime)
    })?;
    log::info!(
        "simulating {}-{} (v_th {}) on {n} images for {} steps",
        cfg.input_coding,
        cfg.hidden_coding,
        cfg.v_th,
        cfg.time_steps
    );
    let result = evaluate(&net, &eval.images, &eval.labels, &settings).map_err(runtime)?;
    let metrics = RunMetrics::new(
        n,
        result.num_neurons,
        result.accuracy_curve(),
        result.cumulative_spikes(),
    )
    .map_err(runtime)?;
    let targets: Vec<TargetResult> = resolve_targets(cfg, dnn_accuracy)
        .into_iter()
        .map(|t| metrics.at_target(t))
        .collect();

    let mut out = OutputSet::new(&cfg.output_dir)?;

    let curve: Vec<Vec<String>> = (1..=cfg.time_steps)
        .map(|t| {
            vec![
                t.to_string(),
                fmt_float(metrics.accuracy[t - 1]),
                metrics.cumulative_spikes[t - 1].to_string(),
            ]
        })
        .collect();
    out.write_csv(
        INFERENCE_CURVE_FILE,
        &["time_step", "accuracy", "cumulative_spikes"],
        &curve,
    )?;

    let beta = match cfg.hidden_coding.kind {
        CodingKind::Burst { beta, .. } => fmt_float(beta),
        _ => String::new(),
    };
    let mut header: Vec<String> = [
        "input_coding",
        "hidden_coding",
        "v_th",
        "beta",
        "dnn_accuracy",
        "snn_accuracy",
        "target",
        "latency",
        "status",
        "total_spikes",
        "num_neurons",
        "spiking_density",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(
        cfg.energy_profiles
            .iter()
            .map(|p| format!("energy_{}", p.name)),
    );
    let mut rows = Vec::new();
    for tr in &targets {
        let row = SummaryRow {
            input_coding: cfg.input_coding.to_string(),
            hidden_coding: cfg.hidden_coding.to_string(),
            v_th: fmt_float(cfg.v_th),
            beta: beta.clone(),
            dnn_accuracy: fmt_float(dnn_accuracy),
            snn_accuracy: fmt_float(metrics.final_accuracy()),
            target: fmt_float(tr.target),
            latency: tr.latency,
            total_spikes: fmt_float(tr.spikes_per_image),
            num_neurons: result.num_neurons,
            spiking_density: fmt_float(tr.density),
            energy: Vec::new(),
        };
        let mut record = row.base_record();
        for profile in &cfg.energy_profiles {
            let cell = match (&baseline, tr.operating_point()) {
                (Some(base), Some(point)) => {
                    let b = base
                        .iter()
                        .find(|b| b.target == row.target)
                        .and_then(SummaryRow::operating_point)
                        .ok_or_else(|| {
                            CliError::Validation(format!(
                                "baseline run {} has no reached target {}",
                                cfg.baseline_run.as_ref().expect("baseline set").display(),
                                row.target
                            ))
                        })?;
                    fmt_float(
                        normalized_energy(&point, &b, profile)
                            .map_err(|e| CliError::Validation(e.to_string()))?,
                    )
                }
                _ => String::new(),
            };
            record.push(cell);
        }
        rows.push(record);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(SUMMARY_FILE, &header_refs, &rows)?;

    let stats = firing_stats(&result.record);
    let stat_rows: Vec<Vec<String>> = stats
        .neurons
        .iter()
        .map(|s| {
            vec![
                s.layer.to_string(),
                s.neuron.to_string(),
                s.acc.spikes.to_string(),
                s.acc
                    .rate()
                    .map(|r| fmt_float(r.log10()))
                    .unwrap_or_default(),
                s.acc.regularity().map(fmt_float).unwrap_or_default(),
            ]
        })
        .collect();
    out.write_csv(
        FIRING_STATS_FILE,
        &[
            "layer",
            "neuron_id",
            "num_spikes",
            "log10_rate",
            "regularity",
        ],
        &stat_rows,
    )?;

    let hidden = result.record.hidden();
    let isih = isi_histogram(&hidden, 1);
    let isih_rows: Vec<Vec<String>> = isih
        .counts
        .iter()
        .map(|(isi, c)| vec![isi.to_string(), c.to_string()])
        .collect();
    out.write_csv(ISIH_FILE, &["isi", "count"], &isih_rows)?;

    let comp = burst_composition(&hidden);
    let total = comp.total_spikes;
    let comp_rows: Vec<Vec<String>> = BURST_BUCKETS
        .iter()
        .zip(comp.bucket_spikes())
        .map(|(label, spikes)| {
            let fraction = if total == 0 {
                0.0
            } else {
                spikes as f64 / total as f64
            };
            vec![label.to_string(), spikes.to_string(), fmt_float(fraction)]
        })
        .collect();
    out.write_csv(
        BURST_COMPOSITION_FILE,
        &["burst_length", "spike_count", "fraction"],
        &comp_rows,
    )?;

    let results = json!({
        "samples": n,
        "time_steps": cfg.time_steps,
        "num_neurons": result.num_neurons,
        "dnn_accuracy": dnn_accuracy,
        "snn_accuracy": metrics.final_accuracy(),
        "hidden_spikes": result.cumulative_hidden_spikes().last().copied().unwrap_or(0),
        "burst_fraction": comp.burst_fraction(),
        "isi_histogram_empty": isih.empty,
    });
    out.finish(RUN_MANIFEST, manifest("run", cfg, started, results))
}
