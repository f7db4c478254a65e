use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, PipelineConfig};
use crate::logging;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Some subjects or stages failed; the remaining outputs are valid.
    Partial,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Complete => 0,
            Status::Partial => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Failure {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Written atomically at the end of every command. Everything except
/// `timings` is a pure function of the config and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    /// Feature-table rows per scored stage.
    pub stage_rows: BTreeMap<String, usize>,
    pub failures: Vec<Failure>,
    pub warnings: Vec<String>,
    /// Agreement statistics against generator truth, when available.
    pub checks: BTreeMap<String, f64>,
    /// Output path (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub timings: Vec<PhaseTiming>,
}

/// State shared by the phases of one invocation.
pub struct Run {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub out_dir: PathBuf,
    timings: Vec<PhaseTiming>,
    warnings: Vec<String>,
    failures: Vec<Failure>,
    outputs: BTreeMap<String, String>,
    pub stage_rows: BTreeMap<String, usize>,
    pub checks: BTreeMap<String, f64>,
}

impl Run {
    pub fn new(config: PipelineConfig) -> Self {
        Run {
            config_hash: config.hash(),
            out_dir: config.out_dir.clone(),
            config,
            timings: Vec::new(),
            warnings: Vec::new(),
            failures: Vec::new(),
            outputs: BTreeMap::new(),
            stage_rows: BTreeMap::new(),
            checks: BTreeMap::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Write an output file atomically and record its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        write_atomic(&path, bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn fail(&mut self, subject_id: &str, reason: String) {
        self.warn(format!("{subject_id}: {reason}"));
        self.failures.push(Failure {
            subject_id: subject_id.to_string(),
            reason,
        });
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("phase {name}");
        let start = Instant::now();
        let out = f(self);
        self.timings.push(PhaseTiming {
            phase: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish(mut self, command: &str) -> Result<Status> {
        self.warnings.extend(logging::take_warnings());
        self.warnings.sort();
        self.warnings.dedup();
        self.failures.sort();
        self.failures.dedup();
        let status = if self.failures.is_empty() {
            Status::Complete
        } else {
            Status::Partial
        };
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: self.config_hash,
            stage_rows: self.stage_rows,
            failures: self.failures,
            warnings: self.warnings,
            checks: self.checks,
            outputs: self.outputs,
            timings: self.timings,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&self.out_dir.join(RUN_MANIFEST), &json)?;
        Ok(status)
    }
}

/// Write through a temporary file in the same directory and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
