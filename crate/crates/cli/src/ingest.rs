use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bhc_core::ingest::manifest::Exclusion;
use bhc_core::ingest::{load_recording, read_manifest, ManifestEntry, Recording};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::run::{to_json, Failure, Run};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub label: String,
    pub unit: String,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedRecording {
    pub subject_id: String,
    pub edf_path: PathBuf,
    pub hypnogram_path: PathBuf,
    pub edf_sha256: String,
    pub hypnogram_sha256: String,
    pub duration_s: f64,
    pub n_epochs: usize,
    /// Scored epochs per stage in code order, then unscored.
    pub stage_counts: [usize; 6],
    pub channels: Vec<ChannelInfo>,
}

/// Validated inventory of a dataset. Contains no timestamps, so identical
/// inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingIndex {
    pub manifest: PathBuf,
    pub epoch_len_s: f64,
    pub recordings: Vec<IndexedRecording>,
    pub excluded: Vec<Exclusion>,
    pub failed: Vec<Failure>,
}

impl RecordingIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("{} not found; run `bhc ingest` first", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Manifest entry pointing at the indexed files.
pub fn entry_for(rec: &IndexedRecording) -> ManifestEntry {
    ManifestEntry {
        subject_id: rec.subject_id.clone(),
        edf_path: rec.edf_path.clone(),
        hypnogram_path: rec.hypnogram_path.clone(),
        exclude: None,
    }
}

fn index_one(entry: &ManifestEntry, base: &Path, epoch_len_s: f64) -> Result<IndexedRecording> {
    let rec: Recording = load_recording(entry, base, epoch_len_s)?;
    let edf_path = resolve(base, &entry.edf_path);
    let hypnogram_path = resolve(base, &entry.hypnogram_path);
    let mut stage_counts = [0usize; 6];
    for s in &rec.hypnogram().stages {
        stage_counts[s.code().map_or(5, usize::from)] += 1;
    }
    for role in [
        bhc_core::ingest::ChannelRole::C3,
        bhc_core::ingest::ChannelRole::C4,
        bhc_core::ingest::ChannelRole::Ecg,
    ] {
        rec.require_channel(role)?;
    }
    Ok(IndexedRecording {
        subject_id: entry.subject_id.clone(),
        edf_sha256: file_sha256(&edf_path)?,
        hypnogram_sha256: file_sha256(&hypnogram_path)?,
        edf_path,
        hypnogram_path,
        duration_s: rec.duration_s(),
        n_epochs: rec.hypnogram().len(),
        stage_counts,
        channels: rec
            .channels()
            .iter()
            .map(|c| ChannelInfo {
                label: c.label.clone(),
                unit: c.physical_dimension.clone(),
                sample_rate_hz: c.sample_rate_hz,
                n_samples: c.samples.len(),
            })
            .collect(),
    })
}

/// Validate every manifest entry and write `index.json`. Recordings are
/// loaded in parallel and dropped after inspection.
pub fn ingest(run: &mut Run) -> Result<RecordingIndex> {
    let manifest = run.config.dataset.clone();
    let epoch_len_s = run.config.epoch_len_s;
    let entries = read_manifest(&manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let results: Vec<Result<IndexedRecording>> = entries
        .par_iter()
        .map(|e| match &e.exclude {
            Some(_) => Err(anyhow::anyhow!("excluded")),
            None => index_one(e, &base, epoch_len_s),
        })
        .collect();

    let mut index = RecordingIndex {
        manifest: manifest.clone(),
        epoch_len_s,
        recordings: Vec::new(),
        excluded: Vec::new(),
        failed: Vec::new(),
    };
    for (entry, result) in entries.iter().zip(results) {
        if let Some(reason) = &entry.exclude {
            log::info!("excluding {}: {reason}", entry.subject_id);
            index.excluded.push(Exclusion {
                subject_id: entry.subject_id.clone(),
                reason: reason.clone(),
            });
            continue;
        }
        match result {
            Ok(r) => index.recordings.push(r),
            Err(e) => {
                let reason = format!("{e:#}");
                run.fail(&entry.subject_id, reason.clone());
                index.failed.push(Failure {
                    subject_id: entry.subject_id.clone(),
                    reason,
                });
            }
        }
    }
    if index.recordings.is_empty() {
        bail!("no usable recordings in {}", manifest.display());
    }
    run.write(INDEX_FILE, &to_json(&index)?)?;
    Ok(index)
}
