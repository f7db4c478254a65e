//! Deterministic synthetic polysomnography.
//!
//! A subject is a staged hypnogram, two EEG channels built from 1/f spectra
//! with stage-dependent band emphasis, and an ECG template train whose RR
//! intervals carry a 0.3 Hz (HF) and a 0.05 Hz (LF) modulation. Every random
//! draw comes from a ChaCha stream keyed by `(seed, subject index)`, so
//! subjects can be generated in any order or in parallel.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::features::{FeatureRow, FeatureTable, Provenance};
use crate::ingest::edf::{write_edf, EdfHeader, SignalHeader};
use crate::ingest::manifest::write_manifest;
use crate::ingest::{Hypnogram, ManifestEntry, SleepStage};
use crate::lmm::{build_design, ModelDesign, ModelSpec, StatsError};
use crate::{Error, Result};

pub const EEG_LABELS: [&str; 2] = ["EEG C3-M2", "EEG C4-M1"];
pub const ECG_LABEL: &str = "ECG";
/// Edges of the five analysis bands followed by the upper limit of the
/// generated spectrum: delta, theta, alpha, beta, gamma.
const BAND_EDGES: [f64; 6] = [1.0, 4.0, 8.0, 12.0, 30.0, 80.0];
/// Frequency range of the sub-delta component.
const SLOW_BAND: (f64, f64) = (0.5, 1.0);

/// Stage (and subtype) profile: target fraction of total EEG power per band
/// and the depth of the 0.3 Hz RR modulation in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub band_fractions: [f64; 5],
    pub hf_amp_ms: f64,
}

const fn profile(band_fractions: [f64; 5], hf_amp_ms: f64) -> Profile {
    Profile {
        band_fractions,
        hf_amp_ms,
    }
}

const WAKE: Profile = profile([0.25, 0.15, 0.25, 0.20, 0.10], 10.0);
const N1: Profile = profile([0.40, 0.25, 0.12, 0.12, 0.04], 18.0);
const N3: Profile = profile([0.82, 0.08, 0.03, 0.015, 0.003], 60.0);
/// NREM2 subtypes.
pub const N2_SUBTYPES: [Profile; 3] = [
    profile([0.60, 0.19, 0.10, 0.05, 0.008], 35.0),
    profile([0.74, 0.12, 0.05, 0.02, 0.004], 65.0),
    profile([0.48, 0.15, 0.10, 0.14, 0.04], 22.0),
];
/// REM subtypes.
pub const REM_SUBTYPES: [Profile; 4] = [
    profile([0.45, 0.22, 0.12, 0.10, 0.02], 25.0),
    profile([0.60, 0.18, 0.07, 0.05, 0.01], 40.0),
    profile([0.35, 0.20, 0.15, 0.18, 0.06], 15.0),
    profile([0.50, 0.25, 0.08, 0.07, 0.015], 30.0),
];

/// Profile of an epoch; N2 and REM epochs need a subtype.
pub fn stage_profile(stage: SleepStage, subtype: Option<usize>) -> Profile {
    match stage {
        SleepStage::Wake | SleepStage::Unscored => WAKE,
        SleepStage::N1 => N1,
        SleepStage::N3 => N3,
        SleepStage::N2 => N2_SUBTYPES[subtype.unwrap_or(0) % N2_SUBTYPES.len()],
        SleepStage::Rem => REM_SUBTYPES[subtype.unwrap_or(0) % REM_SUBTYPES.len()],
    }
}

/// Dataset shape. `cycle_scale` shrinks the sleep-cycle template so short
/// recordings still contain every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub name: String,
    pub n_subjects: usize,
    pub duration_s: usize,
    pub fs: usize,
    pub epoch_len_s: usize,
    pub cycle_scale: f64,
    /// Amplitude (mV) of a 0.3 Hz baseline wander added to the ECG.
    pub wander_mv: f64,
    pub ecg_noise_mv: f64,
    /// Relative per-band jitter (log-normal sigma) of the EEG profile.
    pub eeg_jitter: f64,
    /// Subjects (by index) whose ECG lead is replaced by low-level noise.
    pub corrupt_ecg: Vec<usize>,
}

impl SynthProfile {
    /// Three 8 h nights at 256 Hz.
    pub fn night() -> Self {
        SynthProfile {
            name: "night".into(),
            n_subjects: 3,
            duration_s: 8 * 3600,
            fs: 256,
            epoch_len_s: 30,
            cycle_scale: 1.0,
            wander_mv: 0.0,
            ecg_noise_mv: 0.01,
            eeg_jitter: 0.05,
            corrupt_ecg: Vec::new(),
        }
    }

    /// Two 2 h recordings with a compressed cycle.
    pub fn mini() -> Self {
        SynthProfile {
            name: "mini".into(),
            n_subjects: 2,
            duration_s: 2 * 3600,
            cycle_scale: 0.5,
            ..Self::night()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "night" => Some(Self::night()),
            "mini" => Some(Self::mini()),
            _ => None,
        }
    }

    pub fn n_epochs(&self) -> usize {
        self.duration_s / self.epoch_len_s
    }
}

/// Generator output for one subject.
#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub subject_id: String,
    pub hypnogram: Hypnogram,
    pub subtype: Vec<Option<usize>>,
    /// Target band fractions per epoch, `[C3, C4]`, as fractions of all
    /// generated power.
    pub band_fractions: Vec<[[f64; 5]; 2]>,
    pub hf_amp_ms: Vec<f64>,
    pub beat_times_s: Vec<f64>,
    pub eeg: [Vec<f64>; 2],
    pub ecg: Vec<f64>,
    /// Subtype propensities for N2 and REM.
    pub n2_propensity: Vec<f64>,
    pub rem_propensity: Vec<f64>,
}

pub fn subject_id(index: usize) -> String {
    format!("SYN{:03}", index + 1)
}

fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Staged hypnogram built from jittered ~90 min cycles:
/// N1 -> N2 -> N3 -> N2 -> REM, with N3 shrinking and REM growing across
/// the night, a wake period at lights-off and occasional short awakenings.
pub fn staged_hypnogram(rng: &mut ChaCha8Rng, n_epochs: usize, epoch_len_s: usize, scale: f64) -> Vec<SleepStage> {
    let per_min = 60.0 / epoch_len_s as f64;
    let len = |rng: &mut ChaCha8Rng, minutes: f64| -> usize {
        let m = minutes * scale * rng.random_range(0.8..1.2);
        ((m * per_min).round() as usize).max(1)
    };
    let mut out = Vec::with_capacity(n_epochs);
    let push = |out: &mut Vec<SleepStage>, stage: SleepStage, n: usize| {
        out.extend(std::iter::repeat_n(stage, n));
    };
    push(&mut out, SleepStage::Wake, len(rng, 10.0));
    let mut cycle = 0.0;
    while out.len() < n_epochs {
        push(&mut out, SleepStage::N1, len(rng, 3.0));
        push(&mut out, SleepStage::N2, len(rng, 20.0));
        let n3 = 35.0 - 10.0 * cycle;
        if n3 > 0.0 {
            push(&mut out, SleepStage::N3, len(rng, n3));
        }
        push(&mut out, SleepStage::N2, len(rng, 12.0 + 3.0 * cycle));
        push(&mut out, SleepStage::Rem, len(rng, 10.0 + 6.0 * cycle));
        if rng.random_bool(0.5) {
            push(&mut out, SleepStage::Wake, len(rng, 2.0));
        }
        cycle += 1.0;
    }
    out.truncate(n_epochs);
    out
}

fn draw_propensity(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn draw_index(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Subtype per epoch for N2 and REM, in runs of 4-12 epochs drawn from the
/// subject's propensities.
pub fn assign_subtypes(rng: &mut ChaCha8Rng, stages: &[SleepStage], n2: &[f64], rem: &[f64]) -> Vec<Option<usize>> {
    let mut out = vec![None; stages.len()];
    let mut i = 0;
    while i < stages.len() {
        let p = match stages[i] {
            SleepStage::N2 => n2,
            SleepStage::Rem => rem,
            _ => {
                i += 1;
                continue;
            }
        };
        let k = draw_index(rng, p);
        let run = rng.random_range(4..=12);
        let stage = stages[i];
        let mut j = 0;
        while j < run && i < stages.len() && stages[i] == stage {
            out[i] = Some(k);
            i += 1;
            j += 1;
        }
    }
    out
}

/// Jittered band fractions of all generated power. The remainder goes to
/// the sub-delta and above-gamma components, so the five bands never sum
/// to exactly one.
fn jitter_fractions(rng: &mut ChaCha8Rng, p: &[f64; 5], sigma: f64) -> ([f64; 5], f64, f64) {
    let mut f = [0.0; 5];
    for (fi, &pi) in f.iter_mut().zip(p) {
        *fi = pi * (sigma * normal(rng)).exp();
    }
    let rest = (1.0 - p.iter().sum::<f64>()).max(0.02) * (0.25 * normal(rng)).exp();
    let slow = 0.8 * rest;
    let high = 0.2 * rest;
    let total: f64 = f.iter().sum::<f64>() + rest;
    for fi in &mut f {
        *fi /= total;
    }
    (f, slow / total, high / total)
}

/// One EEG epoch with a 1/f spectrum inside each band, scaled so band `b`
/// carries `powers[b]` (variance units), plus a sub-delta and an
/// above-gamma component. Phases are uniform.
pub fn eeg_epoch(
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
    n: usize,
    fs: f64,
    band_power: &[f64; 5],
    slow_power: f64,
    high_power: f64,
) -> Vec<f64> {
    let df = fs / n as f64;
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    let mut fill = |lo: f64, hi: f64, power: f64, rng: &mut ChaCha8Rng| {
        let k0 = (lo / df).ceil() as usize;
        let k1 = ((hi / df).ceil() as usize).min(n / 2);
        if k1 <= k0 || power <= 0.0 {
            return;
        }
        let weight: f64 = (k0..k1).map(|k| 1.0 / (k as f64 * df)).sum();
        for (k, bin) in spec.iter_mut().enumerate().take(k1).skip(k0) {
            let p = power * (1.0 / (k as f64 * df)) / weight;
            let amp = (2.0 * p).sqrt();
            let phase = rng.random_range(0.0..2.0 * PI);
            *bin = Complex::from_polar(amp / 2.0, phase);
        }
    };
    fill(SLOW_BAND.0, SLOW_BAND.1, slow_power, rng);
    for b in 0..5 {
        fill(BAND_EDGES[b], BAND_EDGES[b + 1], band_power[b], rng);
    }
    fill(BAND_EDGES[5], fs / 2.0, high_power, rng);
    for k in 1..n.div_ceil(2) {
        spec[n - k] = spec[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

/// Beat times from an RR process
/// `rr(t) = base + a_hf(t) sin(2 pi 0.3 t + p1) + a_lf sin(2 pi 0.05 t + p2) + e`.
pub fn modulated_beats(
    rng: &mut ChaCha8Rng,
    duration_s: f64,
    base_rr_ms: f64,
    lf_amp_ms: f64,
    rr_noise_ms: f64,
    hf_amp_ms: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let p1 = rng.random_range(0.0..2.0 * PI);
    let p2 = rng.random_range(0.0..2.0 * PI);
    let mut t = rng.random_range(0.2..0.8);
    let mut beats = Vec::new();
    while t < duration_s {
        beats.push(t);
        let rr = base_rr_ms
            + hf_amp_ms(t) * (2.0 * PI * 0.3 * t + p1).sin()
            + lf_amp_ms * (2.0 * PI * 0.05 * t + p2).sin()
            + rr_noise_ms * normal(rng);
        t += rr.clamp(400.0, 1800.0) / 1000.0;
    }
    beats
}

/// Evenly spaced beats at `bpm`, first beat at `offset_s`.
pub fn constant_rate_beats(bpm: f64, duration_s: f64, offset_s: f64) -> Vec<f64> {
    let rr = 60.0 / bpm;
    (0..)
        .map(|i| offset_s + i as f64 * rr)
        .take_while(|&t| t < duration_s)
        .collect()
}

/// P, Q, R, S, T waves as (amplitude mV, offset s, width s) relative to R.
const ECG_WAVES: [(f64, f64, f64); 5] = [
    (0.15, -0.20, 0.025),
    (-0.10, -0.025, 0.008),
    (1.00, 0.0, 0.010),
    (-0.25, 0.025, 0.008),
    (0.30, 0.25, 0.040),
];

/// ECG in mV: a sum of Gaussian P-QRS-T templates with the R wave at each
/// beat time.
pub fn ecg_template_train(beats: &[f64], fs: f64, n_samples: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_samples];
    for &tb in beats {
        for &(amp, off, width) in &ECG_WAVES {
            let c = tb + off;
            let lo = (((c - 5.0 * width) * fs).floor().max(0.0)) as usize;
            let hi = (((c + 5.0 * width) * fs).ceil().max(0.0) as usize).min(n_samples);
            for (i, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                let z = (i as f64 / fs - c) / width;
                *o += amp * (-0.5 * z * z).exp();
            }
        }
    }
    out
}

/// Add `amp * sin(2 pi f t)` to a signal.
pub fn add_sine(signal: &mut [f64], fs: f64, freq_hz: f64, amp: f64) {
    for (i, x) in signal.iter_mut().enumerate() {
        *x += amp * (2.0 * PI * freq_hz * i as f64 / fs).sin();
    }
}

pub fn generate_subject(seed: u64, index: usize, profile: &SynthProfile) -> SynthSubject {
    let mut rng = subject_rng(seed, index);
    let fs = profile.fs as f64;
    let n_epochs = profile.n_epochs();
    let epoch_n = profile.epoch_len_s * profile.fs;
    let n_samples = n_epochs * epoch_n;

    let stages = staged_hypnogram(&mut rng, n_epochs, profile.epoch_len_s, profile.cycle_scale);
    let n2_propensity = draw_propensity(&mut rng, N2_SUBTYPES.len());
    let rem_propensity = draw_propensity(&mut rng, REM_SUBTYPES.len());
    let subtype = assign_subtypes(&mut rng, &stages, &n2_propensity, &rem_propensity);

    let eeg_scale = 300.0 * (0.2 * normal(&mut rng)).exp();
    let mut planner = FftPlanner::new();
    let mut eeg = [Vec::with_capacity(n_samples), Vec::with_capacity(n_samples)];
    let mut band_fractions = Vec::with_capacity(n_epochs);
    let mut hf_amp_ms = Vec::with_capacity(n_epochs);
    for (&stage, &sub) in stages.iter().zip(&subtype) {
        let p = stage_profile(stage, sub);
        let total = eeg_scale * (0.1 * normal(&mut rng)).exp();
        let mut fr = [[0.0; 5]; 2];
        for (e, channel) in eeg.iter_mut().enumerate() {
            let (f, slow, high) = jitter_fractions(&mut rng, &p.band_fractions, profile.eeg_jitter);
            let powers = f.map(|x| x * total);
            channel.extend(eeg_epoch(&mut rng, &mut planner, epoch_n, fs, &powers, slow * total, high * total));
            fr[e] = f;
        }
        band_fractions.push(fr);
        hf_amp_ms.push(p.hf_amp_ms * (0.1 * normal(&mut rng)).exp());
    }

    let base_rr = rng.random_range(880.0..1000.0);
    let epoch_len = profile.epoch_len_s as f64;
    let beats = modulated_beats(&mut rng, profile.duration_s as f64, base_rr, 20.0, 5.0, |t| {
        hf_amp_ms[((t / epoch_len) as usize).min(n_epochs - 1)]
    });
    let mut ecg = if profile.corrupt_ecg.contains(&index) {
        vec![0.0; n_samples]
    } else {
        ecg_template_train(&beats, fs, n_samples)
    };
    if profile.wander_mv > 0.0 {
        add_sine(&mut ecg, fs, 0.3, profile.wander_mv);
    }
    let noise = Normal::new(0.0, profile.ecg_noise_mv.max(1e-4)).expect("finite sd");
    for x in &mut ecg {
        *x += noise.sample(&mut rng);
    }

    SynthSubject {
        subject_id: subject_id(index),
        hypnogram: Hypnogram::new(epoch_len, stages),
        subtype,
        band_fractions,
        hf_amp_ms,
        beat_times_s: beats,
        eeg,
        ecg,
        n2_propensity,
        rem_propensity,
    }
}

impl SynthSubject {
    /// EDF with one-second records holding C3, C4 and ECG.
    pub fn to_edf(&self, fs: usize) -> Result<Vec<u8>> {
        let n_records = self.ecg.len() / fs;
        let signals = vec![self.eeg[0].clone(), self.eeg[1].clone(), self.ecg.clone()];
        let headers = vec![
            SignalHeader::for_samples(EEG_LABELS[0], "uV", &signals[0], fs)?,
            SignalHeader::for_samples(EEG_LABELS[1], "uV", &signals[1], fs)?,
            SignalHeader::for_samples(ECG_LABEL, "mV", &signals[2], fs)?,
        ];
        let header = EdfHeader {
            version: "0".into(),
            patient_id: format!("{} X X X", self.subject_id),
            recording_id: "Startdate X X X synthetic".into(),
            start_date: "01.01.25".into(),
            start_time: "22.00.00".into(),
            reserved: String::new(),
            n_records,
            record_duration_s: 1.0,
            signals: headers,
        };
        Ok(write_edf(&header, &signals)?)
    }

    pub fn truth(&self) -> SubjectTruth {
        SubjectTruth {
            subject_id: self.subject_id.clone(),
            stages: self.hypnogram.stages.iter().map(|s| s.code().map_or(-1, |c| c as i8)).collect(),
            subtype: self.subtype.clone(),
            hf_amp_ms: self.hf_amp_ms.clone(),
            band_fractions: self.band_fractions.clone(),
            n_beats: self.beat_times_s.len(),
            beat_times_s: self.beat_times_s.clone(),
            n2_propensity: self.n2_propensity.clone(),
            rem_propensity: self.rem_propensity.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    /// Stage codes, `-1` for unscored.
    pub stages: Vec<i8>,
    pub subtype: Vec<Option<usize>>,
    pub hf_amp_ms: Vec<f64>,
    pub band_fractions: Vec<[[f64; 5]; 2]>,
    pub n_beats: usize,
    pub beat_times_s: Vec<f64>,
    pub n2_propensity: Vec<f64>,
    pub rem_propensity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub profile: SynthProfile,
    pub subjects: Vec<SubjectTruth>,
}

impl Truth {
    pub fn read(path: &Path) -> Result<Truth> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Write `SYNxxx.edf`, `SYNxxx_hypnogram.csv`, `manifest.csv` and
/// `truth.json` into `dir`. Subjects are generated in parallel; the
/// output bytes do not depend on scheduling.
pub fn write_dataset(dir: &Path, seed: u64, profile: &SynthProfile) -> Result<Truth> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let subjects: Vec<Result<SubjectTruth>> = (0..profile.n_subjects)
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(seed, i, profile);
            let edf = dir.join(format!("{}.edf", s.subject_id));
            std::fs::write(&edf, s.to_edf(profile.fs)?).map_err(|e| Error::io(&edf, e))?;
            let hyp = dir.join(format!("{}_hypnogram.csv", s.subject_id));
            std::fs::write(&hyp, s.hypnogram.to_csv()).map_err(|e| Error::io(&hyp, e))?;
            Ok(s.truth())
        })
        .collect();
    let subjects = subjects.into_iter().collect::<Result<Vec<_>>>()?;
    let entries: Vec<ManifestEntry> = subjects
        .iter()
        .map(|s| ManifestEntry {
            subject_id: s.subject_id.clone(),
            edf_path: format!("{}.edf", s.subject_id).into(),
            hypnogram_path: format!("{}_hypnogram.csv", s.subject_id).into(),
            exclude: None,
        })
        .collect();
    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, write_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    let truth = Truth {
        seed,
        profile: profile.clone(),
        subjects,
    };
    let path = dir.join(TRUTH_FILE);
    let json = serde_json::to_vec(&truth).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}

/// Variance components of a simulated mixed-model dataset (standard
/// deviations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSds {
    pub subject: f64,
    pub subject_stage: f64,
    pub resid: f64,
}

/// Feature table whose response follows the linear mixed model of `spec`
/// exactly: `y = X beta + u_subject + u_subject_stage + e`.
///
/// Stages are drawn uniformly, relative powers from a jittered Dirichlet-like
/// profile. `beta` must match the design columns (all stages present, so
/// no column is dropped). Returns the table with `hf_yj = y` and the design.
pub fn simulate_mixed_table(
    seed: u64,
    spec: &ModelSpec,
    n_subjects: usize,
    epochs_per_subject: usize,
    beta: &[f64],
    sds: MixedSds,
) -> std::result::Result<(FeatureTable, ModelDesign), StatsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_subjects * epochs_per_subject);
    for s in 0..n_subjects {
        for e in 0..epochs_per_subject {
            let stage = SleepStage::SCORED[rng.random_range(0..5)];
            let mut eeg = [[0.0; 5]; 2];
            for ch in &mut eeg {
                let w: Vec<f64> = (0..6).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
                let t: f64 = w.iter().sum();
                for (c, wi) in ch.iter_mut().zip(&w) {
                    *c = wi / t;
                }
            }
            rows.push(FeatureRow {
                subject_id: subject_id(s),
                epoch_index: e,
                stage,
                eeg,
                hf_abs: 0.0,
                hf_norm: 0.0,
                hf_yj: 0.0,
            });
        }
    }
    let mut table = FeatureTable {
        rows,
        lambda_yj: 1.0,
        provenance: Provenance::default(),
    };
    let design = build_design(&table, spec)?;
    let p = design.design.x.ncols();
    if beta.len() != p {
        return Err(StatsError::Shape(format!("beta has {} entries for {p} columns", beta.len())));
    }
    let fixed = &design.design.x * DVector::from_column_slice(beta);
    let u_subject: Vec<f64> = (0..n_subjects).map(|_| sds.subject * normal(&mut rng)).collect();
    let mut u_cell: std::collections::BTreeMap<(usize, SleepStage), f64> = Default::default();
    for (i, row) in table.rows.iter_mut().enumerate() {
        let s = design.design.subject[i];
        let uc = *u_cell
            .entry((s, row.stage))
            .or_insert_with(|| sds.subject_stage * normal(&mut rng));
        let y = fixed[i] + u_subject[s] + uc + sds.resid * normal(&mut rng);
        row.hf_yj = y;
        row.hf_norm = y;
    }
    let design = build_design(&table, spec)?;
    Ok((table, design))
}
