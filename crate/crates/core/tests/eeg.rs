use bhc_core::eeg::{epoch_band_powers, process_eeg, Band, Denominator, EegConfig, Electrode, DEFAULT_BANDS};
use bhc_core::ingest::{ChannelSignal, Recording, SleepStage};
use bhc_core::synth::{self, SynthProfile, EEG_LABELS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FS: f64 = 256.0;

fn white(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn synthetic_recording(seed: u64, duration_s: usize) -> (synth::SynthSubject, Recording) {
    let profile = SynthProfile {
        duration_s,
        ..SynthProfile::mini()
    };
    let s = synth::generate_subject(seed, 0, &profile);
    let channels = EEG_LABELS
        .iter()
        .zip(&s.eeg)
        .map(|(label, x)| ChannelSignal {
            label: label.to_string(),
            physical_dimension: "uV".into(),
            samples: x.clone(),
            sample_rate_hz: FS,
        })
        .collect();
    let rec = Recording::new(&s.subject_id, channels, s.hypnogram.clone(), duration_s as f64).unwrap();
    (s, rec)
}

#[test]
fn white_noise_splits_by_bandwidth() {
    let cfg = EegConfig::default();
    let span = DEFAULT_BANDS[4].hi_hz - DEFAULT_BANDS[0].lo_hz;
    let mut mean = [0.0; 5];
    for epoch in 0..100 {
        let x = white(epoch, 30 * 256);
        let p = epoch_band_powers(&x, FS, &cfg).unwrap();
        assert!((p.rel.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (m, r) in mean.iter_mut().zip(&p.rel) {
            *m += r / 100.0;
        }
    }
    for (r, b) in mean.iter().zip(&DEFAULT_BANDS) {
        let expect = (b.hi_hz - b.lo_hz) / span;
        assert!((r - expect).abs() <= 0.01, "{:?}: {r} vs {expect}", b.name);
    }
}

#[test]
fn range_denominator_counts_power_outside_the_bands() {
    let x = white(1, 30 * 256);
    let cfg = EegConfig {
        denominator: Denominator::Range { lo_hz: 0.5, hi_hz: 80.0 },
        ..Default::default()
    };
    let p = epoch_band_powers(&x, FS, &cfg).unwrap();
    let sum: f64 = p.rel.iter().sum();
    assert!((sum - 79.0 / 79.5).abs() < 0.01, "{sum}");
    let union = epoch_band_powers(&x, FS, &EegConfig::default()).unwrap();
    assert_eq!(p.abs, union.abs);
}

#[test]
fn deep_sleep_has_more_delta_than_wake() {
    let (s, rec) = synthetic_recording(2024, 3600);
    let cfg = EegConfig::default();
    for e in Electrode::ALL {
        let epochs = process_eeg(&rec, e, &cfg).unwrap();
        let mean_delta = |stage| {
            let v: Vec<f64> = epochs
                .iter()
                .filter(|x| s.hypnogram.stages[x.epoch_index] == stage)
                .map(|x| x.powers.unwrap().rel[Band::Delta as usize])
                .collect();
            assert!(!v.is_empty(), "{stage:?} absent");
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (n3, wake) = (mean_delta(SleepStage::N3), mean_delta(SleepStage::Wake));
        assert!(n3 > wake + 0.1, "{e}: N3 {n3} Wake {wake}");
    }
}

#[test]
fn measured_fractions_track_generated_fractions() {
    let (s, rec) = synthetic_recording(7, 1800);
    let cfg = EegConfig::default();
    let epochs = process_eeg(&rec, Electrode::C3, &cfg).unwrap();
    for e in &epochs {
        let target = s.band_fractions[e.epoch_index][0];
        let total: f64 = target.iter().sum();
        let rel = e.powers.unwrap().rel;
        for b in 1..5 {
            let want = target[b] / total;
            assert!((rel[b] - want).abs() < 0.05, "epoch {} band {b}: {} vs {want}", e.epoch_index, rel[b]);
        }
    }
}

#[test]
fn identical_electrodes_give_identical_powers() {
    let (_, rec) = synthetic_recording(3, 600);
    let c3 = rec.channels()[0].clone();
    let c4 = ChannelSignal {
        label: EEG_LABELS[1].into(),
        ..c3.clone()
    };
    let twin = Recording::new("TWIN", vec![c3, c4], rec.hypnogram().clone(), 600.0).unwrap();
    let cfg = EegConfig::default();
    let a = process_eeg(&twin, Electrode::C3, &cfg).unwrap();
    let b = process_eeg(&twin, Electrode::C4, &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.powers, y.powers);
    }
}

#[test]
fn non_finite_epoch_is_invalid_and_isolated() {
    let (_, rec) = synthetic_recording(4, 300);
    let mut x = rec.channels()[0].samples.clone();
    x[30 * 256 * 2 + 17] = f64::NAN;
    let cfg = EegConfig::default();
    assert!(epoch_band_powers(&x[30 * 256 * 2..30 * 256 * 3], FS, &cfg).is_none());
    assert!(epoch_band_powers(&x[30 * 256..30 * 256 * 2], FS, &cfg).is_some());
    assert!(epoch_band_powers(&vec![0.0; 30 * 256], FS, &cfg).is_none());
}

#[test]
fn processing_is_deterministic() {
    let (_, rec) = synthetic_recording(5, 900);
    let cfg = EegConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| process_eeg(&rec, Electrode::C4, &cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn relative_powers_are_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let x = white(seed, 30 * 256);
        let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let cfg = EegConfig::default();
        let p = epoch_band_powers(&x, FS, &cfg).unwrap();
        let q = epoch_band_powers(&y, FS, &cfg).unwrap();
        for (a, b) in p.rel.iter().zip(&q.rel) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((p.rel.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.rel.iter().all(|r| (0.0..=1.0).contains(r)));
    }
}
