//! `analyze`: joins completed runs into `comparison.csv`, with normalized
//! energy relative to a baseline run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{normalized_energy, EnergyProfile, OperatingPoint};
use crate::model_io::load_config;

use super::commands::SUMMARY_FILE;
use super::output::{fmt_float, read_manifest, OutputSet, RunManifest, RUN_MANIFEST};
use super::{AnalyzeArgs, CliError};

pub const COMPARISON_FILE: &str = "comparison.csv";
const ANALYZE_MANIFEST: &str = "analyze_manifest.json";

/// One row of `summary.csv` (energy columns kept verbatim).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub input_coding: String,
    pub hidden_coding: String,
    pub v_th: String,
    pub beta: String,
    pub dnn_accuracy: String,
    pub snn_accuracy: String,
    pub target: String,
    pub latency: Option<usize>,
    /// Spikes per image at the latency.
    pub total_spikes: String,
    pub num_neurons: usize,
    pub spiking_density: String,
    pub energy: Vec<(String, String)>,
}

impl SummaryRow {
    pub fn status(&self) -> &'static str {
        if self.latency.is_some() {
            "reached"
        } else {
            "failed_to_reach"
        }
    }

    /// Columns up to and including `spiking_density`.
    pub fn base_record(&self) -> Vec<String> {
        vec![
            self.input_coding.clone(),
            self.hidden_coding.clone(),
            self.v_th.clone(),
            self.beta.clone(),
            self.dnn_accuracy.clone(),
            self.snn_accuracy.clone(),
            self.target.clone(),
            self.latency.map(|l| l.to_string()).unwrap_or_default(),
            self.status().to_string(),
            self.total_spikes.clone(),
            self.num_neurons.to_string(),
            self.spiking_density.clone(),
        ]
    }

    pub fn operating_point(&self) -> Option<OperatingPoint> {
        let latency = self.latency?;
        Some(OperatingPoint {
            spikes: self.total_spikes.parse().ok()?,
            density: self.spiking_density.parse().ok()?,
            latency: latency as f64,
        })
    }
}

const BASE_COLUMNS: [&str; 12] = [
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
];

/// Reads `summary.csv` from a run directory.
pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = BASE_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let energy_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("energy_").map(|p| (i, p.to_string())))
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").to_string();
        let latency = match f(7).as_str() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad latency `{s}`")))?),
        };
        rows.push(SummaryRow {
            input_coding: f(0),
            hidden_coding: f(1),
            v_th: f(2),
            beta: f(3),
            dnn_accuracy: f(4),
            snn_accuracy: f(5),
            target: f(6),
            latency,
            total_spikes: f(9),
            num_neurons: f(10).parse().map_err(|_| bad("bad num_neurons".into()))?,
            spiking_density: f(11),
            energy: energy_cols
                .iter()
                .map(|(i, name)| (name.clone(), rec.get(*i).unwrap_or("").to_string()))
                .collect(),
        });
    }
    Ok(rows)
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

struct Run {
    name: String,
    dir: PathBuf,
    manifest: RunManifest,
    rows: Vec<SummaryRow>,
}

fn load_run(dir: &Path) -> Result<Run, CliError> {
    let manifest_path = dir.join(RUN_MANIFEST);
    if !manifest_path.is_file() {
        return Err(CliError::Validation(format!(
            "{}: no {RUN_MANIFEST}; not a completed run directory",
            dir.display()
        )));
    }
    Ok(Run {
        name: run_name(dir),
        dir: dir.to_path_buf(),
        manifest: read_manifest(&manifest_path)?,
        rows: read_summary(dir)?,
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let profiles = match &args.config {
        Some(p) => {
            load_config(p)
                .map_err(|e| CliError::Validation(e.to_string()))?
                .energy_profiles
        }
        None => EnergyProfile::defaults(),
    };
    let runs: Vec<Run> = args
        .runs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<_, _>>()?;
    let baseline = match runs.iter().find(|r| r.name == args.baseline) {
        Some(r) => r.rows.clone(),
        None => {
            load_run(Path::new(&args.baseline))
                .map_err(|e| CliError::Validation(format!("baseline `{}`: {e}", args.baseline)))?
                .rows
        }
    };

    let mut header = vec!["run".to_string()];
    header.extend(BASE_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(profiles.iter().map(|p| format!("energy_{}", p.name)));
    let mut rows = Vec::new();
    for run in &runs {
        for row in &run.rows {
            let mut record = vec![run.name.clone()];
            record.extend(row.base_record());
            let point = row.operating_point();
            let base_point = baseline
                .iter()
                .find(|b| b.target == row.target)
                .and_then(SummaryRow::operating_point);
            for profile in &profiles {
                let cell = match (point, base_point) {
                    (Some(p), Some(b)) => fmt_float(
                        normalized_energy(&p, &b, profile)
                            .map_err(|e| CliError::Validation(e.to_string()))?,
                    ),
                    (Some(_), None) => {
                        return Err(CliError::Validation(format!(
                            "baseline `{}` lacks a reached target {} (needed by run {})",
                            args.baseline, row.target, run.name
                        )))
                    }
                    _ => String::new(),
                };
                record.push(cell);
            }
            rows.push(record);
        }
    }

    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut out = OutputSet::new(&out_dir)?;
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(COMPARISON_FILE, &refs, &rows)?;
    let manifest = RunManifest {
        command: "analyze".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: runs.first().map_or(0, |r| r.manifest.seed),
        config: serde_json::json!({
            "runs": runs.iter().map(|r| r.dir.display().to_string()).collect::<Vec<_>>(),
            "baseline": args.baseline,
            "profiles": profiles,
        }),
        files: Vec::new(),
        duration_secs: started.elapsed().as_secs_f64(),
        results: serde_json::Value::Null,
    };
    out.finish(ANALYZE_MANIFEST, manifest)
}
