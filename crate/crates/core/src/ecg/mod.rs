//! ECG chain: baseline removal, normalization, beat detection and per-epoch
//! HF-HRV power.

mod detect;
mod hrv;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{baseline_remove, moving_minmax_norm};
use crate::ingest::{ChannelRole, Recording};
use crate::{Error, Result};

pub use detect::{detect_beats, detect_beats_traced, BeatSeries, DetectorConfig, DetectorTrace};
pub use hrv::{
    check_beats, epoch_hf_power, rri_series, HrvConfig, HrvEpoch, HrvPower, InvalidReason, RriSeries,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcgConfig {
    pub minmax_window_s: f64,
    /// Context added on each side of an epoch before detection.
    pub pad_s: f64,
    /// Beats closer than this across neighbouring windows are merged.
    pub dedup_s: f64,
    pub detector: DetectorConfig,
    pub hrv: HrvConfig,
}

impl Default for EcgConfig {
    fn default() -> Self {
        EcgConfig {
            minmax_window_s: 2.0,
            pad_s: 1.0,
            dedup_s: 0.2,
            detector: DetectorConfig::default(),
            hrv: HrvConfig::default(),
        }
    }
}

/// Baseline removal followed by moving min-max normalization.
pub fn preprocess(window: &[f64], fs: f64, config: &EcgConfig) -> Result<Vec<f64>> {
    let clean = baseline_remove(window, fs)?;
    Ok(moving_minmax_norm(&clean, config.minmax_window_s, fs)?)
}

/// Beats of the whole recording: each epoch (plus padding) is preprocessed
/// and searched on its own, then detections are merged.
pub fn detect_recording_beats(recording: &Recording, config: &EcgConfig) -> Result<BeatSeries> {
    let ecg = recording.require_channel(ChannelRole::Ecg)?;
    let fs = ecg.sample_rate_hz;
    let hyp = recording.hypnogram();
    let n = ecg.samples.len();
    let pad = (config.pad_s * fs).round() as usize;
    let epoch_n = (hyp.epoch_len_s * fs).round() as usize;

    let per_epoch: Vec<Vec<f64>> = (0..hyp.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let start = (hyp.epoch_start_s(i) * fs).round() as usize;
            if start >= n {
                return Ok(Vec::new());
            }
            let lo = start.saturating_sub(pad);
            let hi = (start + epoch_n + pad).min(n);
            let window = &ecg.samples[lo..hi];
            let pre = match preprocess(window, fs, config) {
                Ok(p) => p,
                Err(Error::Dsp(crate::dsp::DspError::TooShort { .. })) => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
            let beats = detect_beats(&pre, fs, &config.detector)?;
            Ok(beats.beat_times_s.iter().map(|t| t + lo as f64 / fs).collect())
        })
        .collect::<Result<_>>()?;

    let mut all: Vec<f64> = per_epoch.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        match merged.last() {
            Some(&prev) if t - prev < config.dedup_s => {}
            _ => merged.push(t),
        }
    }
    Ok(BeatSeries {
        beat_times_s: merged,
    })
}

/// One [`HrvEpoch`] per hypnogram epoch, in epoch order.
pub fn process_ecg(recording: &Recording, config: &EcgConfig) -> Result<Vec<HrvEpoch>> {
    let beats = detect_recording_beats(recording, config)?;
    Ok(hrv_epochs(recording, &beats, config))
}

/// Per-epoch HF power from an already detected beat series.
pub fn hrv_epochs(recording: &Recording, beats: &BeatSeries, config: &EcgConfig) -> Vec<HrvEpoch> {
    let hyp = recording.hypnogram();
    let len = hyp.epoch_len_s;
    let covered = recording.duration_s();
    (0..hyp.len())
        .into_par_iter()
        .map(|i| {
            let start = hyp.epoch_start_s(i);
            let epoch_beats = beats.within(start, start + len);
            let n_beats = epoch_beats.len();
            if start + len > covered + 1e-9 {
                return HrvEpoch::invalid(i, n_beats, InvalidReason::MissingSignal);
            }
            let rri = match check_beats(&epoch_beats, &config.hrv) {
                Ok(r) => r,
                Err(reason) => return HrvEpoch::invalid(i, n_beats, reason),
            };
            match epoch_hf_power(&rri, start, len, &config.hrv) {
                Ok(Some(power)) => HrvEpoch {
                    epoch_index: i,
                    n_beats,
                    power: Some(power),
                    invalid_reason: None,
                },
                Ok(None) | Err(_) => HrvEpoch::invalid(i, n_beats, InvalidReason::NoPower),
            }
        })
        .collect()
}

/// Debug dump with header `subject,epoch,n_beats,hf_abs,total_abs,hf_norm,valid,reason`.
pub fn write_hrv_debug_csv<W: Write>(out: W, subject: &str, epochs: &[HrvEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject", "epoch", "n_beats", "hf_abs", "total_abs", "hf_norm", "valid", "reason"])?;
    for e in epochs {
        let (hf, tot, norm) = match e.power {
            Some(p) => (p.hf_abs.to_string(), p.total_abs.to_string(), p.hf_norm.to_string()),
            None => Default::default(),
        };
        w.write_record([
            subject.to_string(),
            e.epoch_index.to_string(),
            e.n_beats.to_string(),
            hf,
            tot,
            norm,
            e.is_valid().to_string(),
            e.invalid_reason.map(|r| r.code().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<hrv debug>", e))?;
    Ok(())
}
