//! Dataset manifests: `subject_id,edf_path,hypnogram_path,exclude`.
//!
//! Relative paths resolve against the manifest's directory. The `exclude`
//! column is optional; `1`, `true`, `yes` mark a subject as excluded, and any
//! other non-empty text is taken as the exclusion reason.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::edf::parse_edf;
use super::hypnogram::parse_hypnogram;
use super::recording::{ChannelRole, Recording};
use crate::{Error, Result};

/// Subjects of the Haaglanden Medisch Centrum sleep staging database whose
/// ECG is unusable.
pub const HMC_CORRUPT_ECG: [&str; 5] = ["SN028", "SN036", "SN098", "SN111", "SN115"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub edf_path: PathBuf,
    pub hypnogram_path: PathBuf,
    /// `Some(reason)` when the subject is excluded.
    pub exclude: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    subject_id: String,
    edf_path: String,
    hypnogram_path: String,
    #[serde(default)]
    exclude: Option<String>,
}

fn parse_exclude(raw: Option<String>) -> Option<String> {
    let raw = raw?;
    let t = raw.trim();
    match t.to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" | "n" => None,
        "1" | "true" | "yes" | "y" | "x" => Some("excluded in manifest".into()),
        _ => Some(t.to_string()),
    }
}

/// Read manifest rows. Paths are returned as written.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&bytes)
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawEntry>() {
        let row = row?;
        if row.subject_id.is_empty() {
            return Err(Error::InvalidInput("manifest row with empty subject_id".into()));
        }
        out.push(ManifestEntry {
            subject_id: row.subject_id,
            edf_path: row.edf_path.into(),
            hypnogram_path: row.hypnogram_path.into(),
            exclude: parse_exclude(row.exclude),
        });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("subject_id,edf_path,hypnogram_path,exclude\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.subject_id,
            e.edf_path.display(),
            e.hypnogram_path.display(),
            e.exclude.as_deref().unwrap_or("")
        ));
    }
    out
}

/// Manifest for an HMC-style directory (`SNxxx.edf` with
/// `SNxxx_sleepscoring.edf`), flagging [`HMC_CORRUPT_ECG`].
pub fn hmc_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut subjects: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let stem = name.strip_suffix(".edf")?;
            (stem.starts_with("SN") && !stem.contains('_')).then(|| stem.to_string())
        })
        .collect();
    subjects.sort();
    Ok(subjects
        .into_iter()
        .map(|s| ManifestEntry {
            exclude: HMC_CORRUPT_ECG
                .contains(&s.as_str())
                .then(|| "corrupt ECG data".to_string()),
            edf_path: format!("{s}.edf").into(),
            hypnogram_path: format!("{s}_sleepscoring.edf").into(),
            subject_id: s,
        })
        .collect())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load and validate one subject. Only the channels used by the analysis
/// (C3, C4, ECG) are kept.
pub fn load_recording(entry: &ManifestEntry, base_dir: &Path, epoch_len_s: f64) -> Result<Recording> {
    let edf_path = resolve(base_dir, &entry.edf_path);
    let hyp_path = resolve(base_dir, &entry.hypnogram_path);
    let edf_bytes = std::fs::read(&edf_path).map_err(|e| Error::io(&edf_path, e))?;
    let edf = parse_edf(&edf_bytes)?;
    drop(edf_bytes);
    let hyp_bytes = std::fs::read(&hyp_path).map_err(|e| Error::io(&hyp_path, e))?;
    let hypnogram = parse_hypnogram(&hyp_bytes, epoch_len_s)?;
    let duration_s = edf.duration_s();
    let roles = [ChannelRole::C3, ChannelRole::C4, ChannelRole::Ecg];
    let channels = edf
        .channels
        .into_iter()
        .filter(|c| roles.iter().any(|r| r.matches(&c.label)))
        .collect();
    Recording::new(entry.subject_id.clone(), channels, hypnogram, duration_s)
}

#[derive(Debug)]
pub struct SubjectError {
    pub subject_id: String,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub subject_id: String,
    pub reason: String,
}

/// Result of loading a whole manifest. Per-subject failures do not abort
/// the batch.
#[derive(Debug, Default)]
pub struct DatasetLoad {
    pub recordings: Vec<Recording>,
    pub excluded: Vec<Exclusion>,
    pub errors: Vec<SubjectError>,
}

pub fn load_dataset(manifest: &Path, epoch_len_s: f64) -> Result<DatasetLoad> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = DatasetLoad::default();
    for entry in &entries {
        if let Some(reason) = &entry.exclude {
            log::info!("skipping {}: {reason}", entry.subject_id);
            out.excluded.push(Exclusion {
                subject_id: entry.subject_id.clone(),
                reason: reason.clone(),
            });
            continue;
        }
        match load_recording(entry, base, epoch_len_s) {
            Ok(r) => out.recordings.push(r),
            Err(error) => {
                log::warn!("{}: {error}", entry.subject_id);
                out.errors.push(SubjectError {
                    subject_id: entry.subject_id.clone(),
                    error,
                });
            }
        }
    }
    Ok(out)
}
