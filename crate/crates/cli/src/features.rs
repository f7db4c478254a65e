use std::path::Path;

use anyhow::{bail, Context, Result};
use bhc_core::features::{build_table, extract_subject, FeatureTable, Provenance, SubjectEpochs};
use bhc_core::ingest::{load_recording, SleepStage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::ingest::{entry_for, file_sha256, IndexedRecording, RecordingIndex, INDEX_FILE};
use crate::run::{to_json, write_atomic, Run};

pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_META: &str = "features_meta.json";
const CACHE_DIR: &str = "cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesMeta {
    pub lambda_yj: f64,
    pub provenance: Provenance,
    pub n_rows: usize,
    pub subjects: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    epochs: SubjectEpochs,
}

fn cache_key(extraction_hash: &str, rec: &IndexedRecording) -> String {
    sha256_hex(
        format!(
            "{extraction_hash}\n{}\n{}\n{}",
            rec.subject_id, rec.edf_sha256, rec.hypnogram_sha256
        )
        .as_bytes(),
    )
}

fn read_cache(path: &Path, key: &str) -> Option<SubjectEpochs> {
    let bytes = std::fs::read(path).ok()?;
    let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
    (entry.key == key).then_some(entry.epochs)
}

fn extract(run: &Run, rec: &IndexedRecording, epoch_len_s: f64) -> Result<SubjectEpochs> {
    if file_sha256(&rec.edf_path)? != rec.edf_sha256 || file_sha256(&rec.hypnogram_path)? != rec.hypnogram_sha256 {
        bail!("input files changed since ingest; rerun `bhc ingest`");
    }
    let key = cache_key(&run.config.extraction_hash(), rec);
    let cache = run.path(CACHE_DIR).join(format!("{}.json", rec.subject_id));
    if let Some(epochs) = read_cache(&cache, &key) {
        log::debug!("{}: cached", rec.subject_id);
        return Ok(epochs);
    }
    let recording = load_recording(&entry_for(rec), Path::new("."), epoch_len_s)?;
    let epochs = extract_subject(&recording, &run.config.ecg, &run.config.eeg.to_core())?;
    let bytes = serde_json::to_vec(&CacheEntry { key, epochs })?;
    write_atomic(&cache, &bytes)?;
    let entry: CacheEntry = serde_json::from_slice(&bytes)?;
    Ok(entry.epochs)
}

/// Extract per-epoch features for every indexed recording and write the
/// joined table. Per-subject results are cached by config and input hash.
pub fn features(run: &mut Run) -> Result<FeatureTable> {
    let index = RecordingIndex::read(&run.path(INDEX_FILE))?;
    let epoch_len_s = index.epoch_len_s;
    if epoch_len_s != run.config.epoch_len_s {
        bail!(
            "index was built with {epoch_len_s} s epochs but the config uses {}; rerun `bhc ingest`",
            run.config.epoch_len_s
        );
    }
    let results: Vec<Result<SubjectEpochs>> = {
        let run = &*run;
        index.recordings.par_iter().map(|r| extract(run, r, epoch_len_s)).collect()
    };
    let mut subjects = Vec::new();
    for (rec, result) in index.recordings.iter().zip(results) {
        match result {
            Ok(s) => subjects.push(s),
            Err(e) => run.fail(&rec.subject_id, format!("{e:#}")),
        }
    }
    for f in &index.failed {
        run.fail(&f.subject_id, f.reason.clone());
    }
    if subjects.is_empty() {
        bail!("feature extraction failed for every subject");
    }
    let mut table = build_table(&subjects, run.config.model.lambda).context("building feature table")?;
    table.provenance = Provenance {
        config_hash: run.config_hash.clone(),
        manifest: index
            .manifest
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    run.write(FEATURES_FILE, &csv)?;
    let meta = FeaturesMeta {
        lambda_yj: table.lambda_yj,
        provenance: table.provenance.clone(),
        n_rows: table.rows.len(),
        subjects: table.subjects().iter().map(|s| s.to_string()).collect(),
    };
    run.write(FEATURES_META, &to_json(&meta)?)?;
    record_stage_rows(run, &table);
    Ok(table)
}

pub fn record_stage_rows(run: &mut Run, table: &FeatureTable) {
    for stage in SleepStage::SCORED {
        let n = table.rows.iter().filter(|r| r.stage == stage).count();
        run.stage_rows.insert(stage.label().to_string(), n);
    }
}

/// Load the table written by [`features`].
pub fn load_table(out_dir: &Path) -> Result<FeatureTable> {
    let csv_path = out_dir.join(FEATURES_FILE);
    let file = std::fs::File::open(&csv_path)
        .with_context(|| format!("{} not found; run `bhc features` first", csv_path.display()))?;
    let mut table = FeatureTable::read_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let meta_path = out_dir.join(FEATURES_META);
    let meta: FeaturesMeta = serde_json::from_slice(
        &std::fs::read(&meta_path).with_context(|| format!("{} not found; run `bhc features` first", meta_path.display()))?,
    )?;
    table.lambda_yj = meta.lambda_yj;
    table.provenance = meta.provenance;
    Ok(table)
}
