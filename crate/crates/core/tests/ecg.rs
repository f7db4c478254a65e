use std::f64::consts::PI;

use bhc_core::ecg::{
    check_beats, detect_recording_beats, epoch_hf_power, hrv_epochs, process_ecg, rri_series, BeatSeries, EcgConfig, HrvConfig,
    InvalidReason, RriSeries,
};
use bhc_core::ingest::{ChannelSignal, Hypnogram, Recording, SleepStage};
use bhc_core::synth::{self, add_sine, constant_rate_beats, ecg_template_train, SynthProfile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const FS: f64 = 256.0;

fn ecg_recording(ecg: Vec<f64>, stages: Vec<SleepStage>) -> Recording {
    let duration = ecg.len() as f64 / FS;
    let ch = ChannelSignal {
        label: "ECG".into(),
        physical_dimension: "mV".into(),
        samples: ecg,
        sample_rate_hz: FS,
    };
    Recording::new("T01", vec![ch], Hypnogram::new(30.0, stages), duration).unwrap()
}

fn synthetic_ecg(beats: &[f64], duration_s: f64, wander_mv: f64, noise_mv: f64, seed: u64) -> Vec<f64> {
    let n = (duration_s * FS) as usize;
    let mut x = ecg_template_train(beats, FS, n);
    add_sine(&mut x, FS, 0.3, wander_mv);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_mv.max(1e-12)).unwrap();
    for v in &mut x {
        *v += noise.sample(&mut rng);
    }
    x
}

/// (true positives, false negatives, false positives) under one-to-one
/// matching within `tol_s`.
fn match_beats(truth: &[f64], found: &[f64], tol_s: f64) -> (usize, usize, usize) {
    let (mut i, mut j, mut tp) = (0, 0, 0);
    while i < truth.len() && j < found.len() {
        let d = found[j] - truth[i];
        if d.abs() <= tol_s {
            tp += 1;
            i += 1;
            j += 1;
        } else if d < 0.0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    (tp, truth.len() - tp, found.len() - tp)
}

#[test]
fn detection_sensitivity_and_ppv() {
    let duration = 300.0;
    for bpm in [60.0, 75.0, 90.0] {
        for wander in [0.0, 0.5] {
            let beats = constant_rate_beats(bpm, duration - 0.5, 0.37);
            let ecg = synthetic_ecg(&beats, duration, wander, 0.02, bpm as u64);
            let rec = ecg_recording(ecg, vec![SleepStage::N2; 10]);
            let found = detect_recording_beats(&rec, &EcgConfig::default()).unwrap();
            let (tp, fn_, fp) = match_beats(&beats, &found.beat_times_s, 0.040);
            let se = tp as f64 / (tp + fn_) as f64;
            let ppv = tp as f64 / (tp + fp) as f64;
            assert!(se >= 0.99 && ppv >= 0.99, "{bpm} bpm wander {wander}: Se {se} PPV {ppv}");
        }
    }
}

#[test]
fn detection_on_variable_rhythm() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let beats = synth::modulated_beats(&mut rng, 600.0, 900.0, 20.0, 5.0, |_| 60.0);
    let ecg = synthetic_ecg(&beats, 600.0, 0.3, 0.01, 1);
    let rec = ecg_recording(ecg, vec![SleepStage::N3; 20]);
    let found = detect_recording_beats(&rec, &EcgConfig::default()).unwrap();
    let (tp, fn_, fp) = match_beats(&beats, &found.beat_times_s, 0.040);
    assert!(fn_ + fp <= beats.len() / 100, "tp {tp} fn {fn_} fp {fp}");
    let max_err = beats
        .iter()
        .filter_map(|b| found.beat_times_s.iter().map(|f| (f - b).abs()).min_by(f64::total_cmp))
        .filter(|e| *e <= 0.04)
        .fold(0.0, f64::max);
    assert!(max_err <= 1.0 / FS + 1e-9, "max timing error {max_err}");
}

#[test]
fn beat_counts_in_a_single_epoch() {
    for (bpm, allowed) in [(60.0, vec![30]), (75.0, vec![37, 38])] {
        let beats = constant_rate_beats(bpm, 30.0, 0.5);
        let rec = ecg_recording(synthetic_ecg(&beats, 30.0, 0.0, 0.0, 0), vec![SleepStage::N2]);
        let found = detect_recording_beats(&rec, &EcgConfig::default()).unwrap();
        assert!(allowed.contains(&found.len()), "{bpm} bpm: {} beats", found.len());
    }
}

#[test]
fn steady_rhythm_gives_thirty_beats_per_epoch() {
    let duration = 300.0;
    let beats = constant_rate_beats(60.0, duration, 0.25);
    let rec = ecg_recording(synthetic_ecg(&beats, duration, 0.0, 0.01, 2), vec![SleepStage::N2; 10]);
    let epochs = process_ecg(&rec, &EcgConfig::default()).unwrap();
    assert_eq!(epochs.len(), 10);
    for e in &epochs {
        assert!((29..=31).contains(&e.n_beats), "epoch {}: {} beats", e.epoch_index, e.n_beats);
        match (&e.power, e.invalid_reason) {
            (Some(p), None) => assert!(p.hf_norm.is_finite() && p.total_abs > 0.0),
            (None, Some(InvalidReason::NoPower)) => {}
            other => panic!("epoch {}: {other:?}", e.epoch_index),
        }
    }

    // With a few ms of beat-to-beat jitter every epoch carries power.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let jittered: Vec<f64> = beats.iter().map(|b| b + rng.random_range(-0.004..0.004)).collect();
    let rec = ecg_recording(synthetic_ecg(&jittered, duration, 0.0, 0.01, 3), vec![SleepStage::N2; 10]);
    for e in process_ecg(&rec, &EcgConfig::default()).unwrap() {
        let p = e.power.expect("valid epoch");
        assert!(p.hf_norm.is_finite() && (0.0..=1.0).contains(&p.hf_norm));
    }
}

#[test]
fn sparse_epoch_is_insufficient() {
    let beats = BeatSeries::new(vec![3.0, 4.0]);
    assert_eq!(check_beats(&beats, &HrvConfig::default()).unwrap_err(), InvalidReason::InsufficientBeats);
    let rec = ecg_recording(synthetic_ecg(&[3.0, 4.0], 30.0, 0.0, 0.02, 0), vec![SleepStage::N1]);
    let e = &hrv_epochs(&rec, &beats, &EcgConfig::default())[0];
    assert_eq!(e.n_beats, 2);
    assert_eq!(e.invalid_reason, Some(InvalidReason::InsufficientBeats));
    assert!(e.power.is_none());
}

#[test]
fn stage_ordering_follows_generated_vagal_modulation() {
    let profile = SynthProfile::mini();
    let s = synth::generate_subject(2024, 0, &profile);
    let ch = ChannelSignal {
        label: "ECG".into(),
        physical_dimension: "mV".into(),
        samples: s.ecg.clone(),
        sample_rate_hz: profile.fs as f64,
    };
    let rec = Recording::new(&s.subject_id, vec![ch], s.hypnogram.clone(), profile.duration_s as f64).unwrap();
    let epochs = process_ecg(&rec, &EcgConfig::default()).unwrap();
    let stages = [SleepStage::Wake, SleepStage::N1, SleepStage::N2, SleepStage::N3, SleepStage::Rem];
    let mut measured = Vec::new();
    let mut truth = Vec::new();
    for st in stages {
        let idx: Vec<usize> = (0..epochs.len()).filter(|&i| s.hypnogram.stages[i] == st).collect();
        assert!(!idx.is_empty(), "{st:?} absent");
        let hf: Vec<f64> = idx.iter().filter_map(|&i| epochs[i].power.map(|p| p.hf_norm)).collect();
        assert_eq!(hf.len(), idx.len(), "{st:?} has invalid epochs");
        measured.push(hf.iter().sum::<f64>() / hf.len() as f64);
        truth.push(idx.iter().map(|&i| s.hf_amp_ms[i]).sum::<f64>() / idx.len() as f64);
    }
    let rank = |v: &[f64]| {
        let mut o: Vec<usize> = (0..v.len()).collect();
        o.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        o
    };
    assert_eq!(rank(&measured), rank(&truth), "measured {measured:?} truth {truth:?}");
}

#[test]
fn processing_is_deterministic_across_thread_counts() {
    let s = synth::generate_subject(8, 1, &SynthProfile { duration_s: 900, ..SynthProfile::mini() });
    let ch = ChannelSignal {
        label: "ECG".into(),
        physical_dimension: "mV".into(),
        samples: s.ecg.clone(),
        sample_rate_hz: FS,
    };
    let rec = Recording::new(&s.subject_id, vec![ch], s.hypnogram.clone(), 900.0).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| process_ecg(&rec, &EcgConfig::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

fn rri_from(beats: &[f64]) -> RriSeries {
    rri_series(&BeatSeries::new(beats.to_vec()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rri_matches_brute_force(gaps in prop::collection::vec(0.3f64..2.0, 1..80), t0 in 0.0f64..10.0) {
        let mut beats = vec![t0];
        for g in &gaps {
            beats.push(beats.last().unwrap() + g);
        }
        let r = rri_from(&beats);
        prop_assert_eq!(r.len(), beats.len() - 1);
        for i in 0..r.len() {
            prop_assert_eq!(r.times_s[i], beats[i + 1]);
            prop_assert!((r.rri_ms[i] - 1000.0 * (beats[i + 1] - beats[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn hf_power_invariants(
        seed in any::<u64>(),
        amp in 1.0f64..80.0,
        scale in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut t = rng.random_range(-1.0..0.0);
        let mut beats = Vec::new();
        while t < 31.0 {
            beats.push(t);
            t += (900.0 + amp * (2.0 * PI * 0.25 * t + phase).sin() + rng.random_range(-20.0..20.0)) / 1000.0;
        }
        let r = rri_from(&beats);
        let cfg = HrvConfig::default();
        let p = epoch_hf_power(&r, 0.0, 30.0, &cfg).unwrap().unwrap();
        prop_assert!(p.hf_abs >= 0.0 && p.hf_abs <= p.total_abs * (1.0 + 1e-12));
        prop_assert!((0.0..=1.0).contains(&p.hf_norm));

        let scaled = RriSeries { times_s: r.times_s.clone(), rri_ms: r.rri_ms.iter().map(|v| v * scale).collect() };
        let q = epoch_hf_power(&scaled, 0.0, 30.0, &cfg).unwrap().unwrap();
        prop_assert!((q.hf_norm - p.hf_norm).abs() < 1e-9);
        prop_assert!((q.hf_abs / (scale * scale) - p.hf_abs).abs() <= 1e-9 * p.hf_abs.max(1e-300));
    }
}
