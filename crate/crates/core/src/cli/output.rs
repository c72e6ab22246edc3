//! Output artifacts: CSV formatting, checksummed manifests and cleanup of
//! partial outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` with [`SIGNIFICANT_DIGITS`] significant digits, trailing zeros
/// trimmed; scientific notation outside `[1e-5, 1e9)`.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&magnitude) {
        let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
        let (mantissa, exp) = s.split_once('e').expect("scientific format");
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - magnitude).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one subcommand invocation, written after all of its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
    pub duration_secs: f64,
    /// Command-specific results (accuracies, scales, ...).
    #[serde(default)]
    pub results: serde_json::Value,
}

pub const RUN_MANIFEST: &str = "manifest.json";

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: malformed manifest: {e}", path.display())))
}

/// Tracks files written by a command. Unless [`OutputSet::finish`] is
/// called, dropping the set deletes them, so a failed command leaves no
/// partial outputs behind.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            committed: false,
        })
    }

    /// Registers `path` (absolute, or relative to the output directory)
    /// before it is written.
    pub fn track(&mut self, path: impl AsRef<Path>) -> PathBuf {
        let p = path.as_ref();
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        };
        self.files.push(full.clone());
        full
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let path = self.track(name);
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(())
    }

    /// Checksums every tracked file, then writes the manifest last.
    pub fn finish(
        mut self,
        manifest_name: &str,
        mut manifest: RunManifest,
    ) -> Result<PathBuf, CliError> {
        manifest.files = self
            .files
            .iter()
            .map(|p| {
                let bytes = fs::metadata(p).map_err(|e| CliError::io(p, e))?.len();
                let name = p
                    .strip_prefix(&self.dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned();
                Ok(FileEntry {
                    name,
                    sha256: sha256_file(p)?,
                    bytes,
                })
            })
            .collect::<Result<_, CliError>>()?;
        let path = self.track(manifest_name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        self.committed = true;
        Ok(path)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for f in &self.files {
                if f.exists() {
                    log::warn!("removing partial output {}", f.display());
                    let _ = fs::remove_file(f);
                }
            }
        }
    }
}
