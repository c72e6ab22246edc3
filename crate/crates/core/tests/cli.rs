//! End-to-end tests of the command-line harness on a small synthetic
//! IDX dataset: train → normalize → run → analyze.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use burst_snn::cli::{
    main_with_args, read_manifest, read_summary, sha256_file, BURST_COMPOSITION_FILE,
    COMPARISON_FILE, FIRING_STATS_FILE, INFERENCE_CURVE_FILE, ISIH_FILE, NORMALIZE_MANIFEST,
    RUN_MANIFEST, SUMMARY_FILE, TRAIN_MANIFEST,
};
use burst_snn::model_io::write_idx;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;

const SIDE: usize = 6;
const RUN_CSVS: [&str; 5] = [
    INFERENCE_CURVE_FILE,
    SUMMARY_FILE,
    FIRING_STATS_FILE,
    ISIH_FILE,
    BURST_COMPOSITION_FILE,
];

/// Each class lights up its own three-pixel pattern over faint noise.
fn synthetic_split(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let mut img: Vec<u8> = (0..SIDE * SIDE).map(|_| rng.random_range(0..40)).collect();
        for p in [label as usize, label as usize + 12, label as usize + 24] {
            img[p] = rng.random_range(180..=255);
        }
        images.push(img);
        labels.push(label);
    }
    (images, labels)
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fs::create_dir_all(&data).unwrap();
        let (train_x, train_y) = synthetic_split(300, 1);
        let (test_x, test_y) = synthetic_split(60, 2);
        write_idx(
            data.join("train-images"),
            data.join("train-labels"),
            SIDE,
            SIDE,
            &train_x,
            &train_y,
        )
        .unwrap();
        write_idx(
            data.join("test-images"),
            data.join("test-labels"),
            SIDE,
            SIDE,
            &test_x,
            &test_y,
        )
        .unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Writes a config named `name` with `extra` merged over the defaults.
    fn config(&self, name: &str, extra: serde_json::Value) -> PathBuf {
        let mut cfg = json!({
            "model": "models/mlp.json",
            "normalized_model": "models/mlp.normalized.json",
            "train_images": "data/train-images",
            "train_labels": "data/train-labels",
            "test_images": "data/test-images",
            "test_labels": "data/test-labels",
            "input_coding": {"kind": "phase", "k": 8},
            "hidden_coding": {"kind": "burst", "beta": 2.0},
            "v_th": 0.125,
            "time_steps": 24,
            "seed": 7,
            "output_dir": "out",
            "hidden_layers": [16],
            "epochs": 15,
            "learning_rate": 0.1,
            "batch_size": 10,
            "record_fraction": 0.5,
            "eval_subset": 0
        });
        for (k, v) in extra.as_object().unwrap() {
            cfg[k] = v.clone();
        }
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        path
    }

    /// Trains and normalizes the shared model.
    fn prepared(self) -> Self {
        let cfg = self.config("prep.json", json!({}));
        assert_eq!(cli(&["train", "--config", s(&cfg)]), 0);
        assert_eq!(cli(&["normalize", "--config", s(&cfg)]), 0);
        self
    }

    fn run(&self, name: &str, extra: serde_json::Value, out: &str) -> i32 {
        let cfg = self.config(&format!("{name}.json"), extra);
        cli(&["run", "--config", s(&cfg), "--out", s(&self.path(out))])
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("burst-snn").chain(args.iter().copied()))
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn full_pipeline_writes_checksummed_outputs() {
    let ws = Workspace::new().prepared();
    let train_manifest = read_manifest(&ws.path("out").join(TRAIN_MANIFEST)).unwrap();
    assert_eq!(train_manifest.command, "train");
    let test_acc = train_manifest.results["test_accuracy"].as_f64().unwrap();
    assert!(
        test_acc >= 0.9,
        "synthetic task should be easy, got {test_acc}"
    );
    let norm_manifest = read_manifest(&ws.path("out").join(NORMALIZE_MANIFEST)).unwrap();
    assert_eq!(norm_manifest.results["prediction_mismatches"], 0);

    assert_eq!(ws.run("run", json!({}), "runs/pb"), 0);
    let run_dir = ws.path("runs/pb");
    let manifest = read_manifest(&run_dir.join(RUN_MANIFEST)).unwrap();
    let names: Vec<&str> = manifest.files.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, RUN_CSVS);
    for f in &manifest.files {
        assert_eq!(
            f.sha256,
            sha256_file(&run_dir.join(&f.name)).unwrap(),
            "{}",
            f.name
        );
    }
    assert_eq!(csv_rows(&run_dir.join(INFERENCE_CURVE_FILE)).len(), 24);
    assert_eq!(csv_rows(&run_dir.join(BURST_COMPOSITION_FILE)).len(), 5);
}

/// The summary's latency and spike count follow from the inference curve.
#[test]
fn summary_consistent_with_inference_curve() {
    let ws = Workspace::new().prepared();
    assert_eq!(
        ws.run(
            "run",
            json!({"target_accuracies": [0.5, 0.999999], "relative_targets_pp": [1.0]}),
            "runs/pb"
        ),
        0
    );
    let dir = ws.path("runs/pb");
    let curve = csv_rows(&dir.join(INFERENCE_CURVE_FILE));
    let acc: Vec<f64> = curve.iter().map(|r| r[1].parse().unwrap()).collect();
    let cum: Vec<f64> = curve.iter().map(|r| r[2].parse().unwrap()).collect();
    let samples = read_manifest(&dir.join(RUN_MANIFEST)).unwrap().results["samples"]
        .as_f64()
        .unwrap();
    let rows = read_summary(&dir).unwrap();
    assert_eq!(rows.len(), 3, "two absolute targets plus one relative");
    for row in &rows {
        let target: f64 = row.target.parse().unwrap();
        let expected = acc.iter().position(|&a| a >= target - 1e-12).map(|i| i + 1);
        assert_eq!(row.latency, expected, "target {target}");
        let t = expected.unwrap_or(acc.len());
        let spikes: f64 = row.total_spikes.parse().unwrap();
        assert!((spikes - cum[t - 1] / samples).abs() <= 1e-6 * spikes.max(1.0));
        let density: f64 = row.spiking_density.parse().unwrap();
        let want = cum[t - 1] / samples / (row.num_neurons as f64 * t as f64);
        assert!((density - want).abs() <= 1e-8 * want.max(1e-9));
    }
    assert!(rows[0].latency.is_some());
    assert_eq!(rows[0].status(), "reached");
}

#[test]
fn single_step_run() {
    let ws = Workspace::new().prepared();
    assert_eq!(ws.run("t1", json!({"time_steps": 1}), "runs/t1"), 0);
    assert_eq!(
        csv_rows(&ws.path("runs/t1").join(INFERENCE_CURVE_FILE)).len(),
        1
    );
}

#[test]
fn worker_count_does_not_change_outputs() {
    let ws = Workspace::new().prepared();
    let cfg = ws.config("run.json", json!({}));
    for (w, out) in [("1", "w1"), ("8", "w8")] {
        let out = ws.path(out);
        assert_eq!(
            cli(&["run", "--config", s(&cfg), "--workers", w, "--out", s(&out)]),
            0
        );
    }
    for name in RUN_CSVS {
        let a = fs::read(ws.path("w1").join(name)).unwrap();
        let b = fs::read(ws.path("w8").join(name)).unwrap();
        assert!(a == b, "{name} differs between worker counts");
    }
}

#[test]
fn same_seed_gives_identical_model() {
    let ws = Workspace::new();
    let m1 = ws.path("m1.json");
    let m2 = ws.path("m2.json");
    for m in [&m1, &m2] {
        let c = ws.config("t.json", json!({"epochs": 3, "model": s(m)}));
        assert_eq!(cli(&["train", "--config", s(&c)]), 0);
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let other = ws.path("m3.json");
    let c = ws.config("t.json", json!({"epochs": 3, "model": s(&other)}));
    assert_eq!(cli(&["train", "--config", s(&c), "--seed", "8"]), 0);
    assert_ne!(fs::read(&m1).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn percentile_override_is_recorded() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", json!({"epochs": 2}));
    assert_eq!(cli(&["train", "--config", s(&cfg)]), 0);
    assert_eq!(
        cli(&["normalize", "--config", s(&cfg), "--percentile", "100"]),
        0
    );
    let m = read_manifest(&ws.path("out").join(NORMALIZE_MANIFEST)).unwrap();
    assert_eq!(m.results["percentile"], 100.0);
    assert_eq!(
        cli(&["normalize", "--config", s(&cfg), "--percentile", "0"]),
        1
    );
    assert_eq!(
        cli(&["normalize", "--config", s(&cfg), "--percentile", "100.5"]),
        1
    );
}

#[test]
fn validation_errors_exit_with_one() {
    let ws = Workspace::new();
    let zero_epochs = ws.config("e0.json", json!({"epochs": 0}));
    assert_eq!(cli(&["train", "--config", s(&zero_epochs)]), 1);
    let unknown = ws.config("u.json", json!({"bogus_key": 1}));
    assert_eq!(cli(&["train", "--config", s(&unknown)]), 1);
    let real_hidden = ws.config("rh.json", json!({"hidden_coding": {"kind": "real"}}));
    assert_eq!(cli(&["run", "--config", s(&real_hidden)]), 1);
    // no normalized model yet
    let cfg = ws.config("c.json", json!({}));
    assert_eq!(cli(&["run", "--config", s(&cfg)]), 1);
    assert_eq!(cli(&["run", "--config", s(&ws.path("missing.json"))]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert!(!ws.path("out").join(RUN_MANIFEST).exists());
}

#[test]
fn binary_reports_exit_codes() {
    let ws = Workspace::new();
    let bin = env!("CARGO_BIN_EXE_burst-snn");
    let bad = ws.config("e0.json", json!({"epochs": 0}));
    let status = Command::new(bin)
        .args(["train", "--config", s(&bad)])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("analyze"));
}

#[test]
fn analyze_against_self_gives_unit_energy() {
    let ws = Workspace::new().prepared();
    assert_eq!(ws.run("pb", json!({}), "runs/pb"), 0);
    assert_eq!(
        ws.run(
            "pp",
            json!({"hidden_coding": {"kind": "phase", "k": 8}, "v_th": 1.0}),
            "runs/pp"
        ),
        0
    );
    let out = ws.path("cmp");
    let code = cli(&[
        "analyze",
        s(&ws.path("runs/pb")),
        s(&ws.path("runs/pp")),
        "--baseline",
        "pb",
        "--out",
        s(&out),
    ]);
    let comparison = out.join(COMPARISON_FILE);
    let pp_reached = read_summary(&ws.path("runs/pp")).unwrap()[0]
        .latency
        .is_some();
    let pb_reached = read_summary(&ws.path("runs/pb")).unwrap()[0]
        .latency
        .is_some();
    assert!(
        pb_reached,
        "burst run should reach DNN − 1 pp on the synthetic task"
    );
    assert_eq!(code, 0);
    let mut r = csv::Reader::from_path(&comparison).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(&header[0], "run");
    let energy_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("energy_"))
        .collect();
    assert_eq!(energy_cols.len(), 2);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    let pb = rows.iter().find(|r| &r[0] == "pb").unwrap();
    for &i in &energy_cols {
        assert_eq!(&pb[i], "1");
    }
    let pp = rows.iter().find(|r| &r[0] == "pp").unwrap();
    for &i in &energy_cols {
        assert_eq!(pp[i].is_empty(), !pp_reached);
    }
}

#[test]
fn run_with_baseline_fills_energy_columns() {
    let ws = Workspace::new().prepared();
    assert_eq!(ws.run("base", json!({}), "runs/base"), 0);
    let base = ws.path("runs/base");
    assert_eq!(
        ws.run("again", json!({"baseline_run": s(&base)}), "runs/again"),
        0
    );
    let rows = read_summary(&ws.path("runs/again")).unwrap();
    assert!(rows[0].latency.is_some());
    assert_eq!(rows[0].energy.len(), 2);
    assert!(rows[0].energy.iter().all(|(_, e)| e == "1"));
    // without a baseline the energy columns stay empty
    assert!(read_summary(&base).unwrap()[0]
        .energy
        .iter()
        .all(|(_, e)| e.is_empty()));
}

#[test]
fn analyze_rejects_incomplete_run_directory() {
    let ws = Workspace::new();
    let partial = ws.path("runs/partial");
    fs::create_dir_all(&partial).unwrap();
    fs::write(partial.join(SUMMARY_FILE), "input_coding\n").unwrap();
    let err = burst_snn::cli::execute(
        &<burst_snn::cli::Cli as clap::Parser>::try_parse_from([
            "burst-snn",
            "analyze",
            s(&partial),
            "--baseline",
            "partial",
            "--out",
            s(&ws.path("cmp")),
        ])
        .unwrap(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains(s(&partial)), "{err}");
    assert!(!ws.path("cmp").join(COMPARISON_FILE).exists());
}
