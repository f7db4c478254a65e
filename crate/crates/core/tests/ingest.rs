use std::f64::consts::PI;

use bhc_core::ingest::edf::{parse_header, SignalHeader};
use bhc_core::ingest::manifest::{hmc_manifest, HMC_CORRUPT_ECG};
use bhc_core::ingest::{load_dataset, parse_edf, write_edf, EdfHeader, SleepStage};
use bhc_core::synth::{self, SynthProfile, Truth};
use proptest::prelude::*;

fn header(signals: Vec<SignalHeader>, n_records: usize, record_duration_s: f64) -> EdfHeader {
    EdfHeader {
        version: "0".into(),
        patient_id: "X X X X".into(),
        recording_id: "Startdate X X X X".into(),
        start_date: "01.01.20".into(),
        start_time: "22.00.00".into(),
        reserved: String::new(),
        n_records,
        record_duration_s,
        signals,
    }
}

#[test]
fn sine_round_trip_within_one_step() {
    let fs = 256;
    let n_records = 10;
    let x: Vec<f64> = (0..fs * n_records)
        .map(|i| 50.0 * (2.0 * PI * 10.0 * i as f64 / fs as f64).sin())
        .collect();
    let sig = SignalHeader::for_samples("EEG C3-M2", "uV", &x, fs).unwrap();
    let h = header(vec![sig.clone()], n_records, 1.0);
    let bytes = write_edf(&h, &[x.clone()]).unwrap();
    assert_eq!(bytes.len(), h.header_bytes() + n_records * h.record_bytes());

    let edf = parse_edf(&bytes).unwrap();
    assert_eq!(edf.header, h);
    assert_eq!(parse_header(&bytes).unwrap(), h);
    let ch = &edf.channels[0];
    assert_eq!(ch.label, "EEG C3-M2");
    assert_eq!(ch.physical_dimension, "uV");
    assert_eq!(ch.sample_rate_hz, 256.0);
    assert_eq!(ch.samples.len(), n_records * fs);
    let step = sig.gain();
    for (a, b) in x.iter().zip(&ch.samples) {
        assert!((a - b).abs() <= step, "{a} vs {b}, step {step}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_layouts_round_trip(
        n_records in 1usize..6,
        rates in prop::collection::vec(1usize..40, 1..4),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut headers = Vec::new();
        let mut data = Vec::new();
        for (i, &spr) in rates.iter().enumerate() {
            let scale = rng.random_range(0.1..1000.0);
            let x: Vec<f64> = (0..n_records * spr).map(|_| rng.random_range(-scale..scale)).collect();
            headers.push(SignalHeader::for_samples(&format!("S{i}"), "uV", &x, spr).unwrap());
            data.push(x);
        }
        let h = header(headers, n_records, 2.0);
        let edf = parse_edf(&write_edf(&h, &data).unwrap()).unwrap();
        prop_assert_eq!(&edf.header, &h);
        prop_assert_eq!(edf.duration_s(), 2.0 * n_records as f64);
        for ((ch, x), sig) in edf.channels.iter().zip(&data).zip(&h.signals) {
            prop_assert_eq!(ch.samples.len(), n_records * sig.samples_per_record);
            prop_assert_eq!(ch.sample_rate_hz, sig.samples_per_record as f64 / 2.0);
            for (a, b) in x.iter().zip(&ch.samples) {
                prop_assert!((a - b).abs() <= sig.gain());
            }
        }
    }
}

#[test]
fn manifest_exclusions_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let profile = SynthProfile {
        n_subjects: 3,
        duration_s: 600,
        ..SynthProfile::mini()
    };
    synth::write_dataset(dir.path(), 5, &profile).unwrap();
    let manifest = dir.path().join("edited.csv");
    std::fs::write(
        &manifest,
        "subject_id,edf_path,hypnogram_path,exclude\n\
         SYN001,SYN001.edf,SYN001_hypnogram.csv,\n\
         SYN002,SYN002.edf,SYN002_hypnogram.csv,corrupt ECG\n\
         SYN003,SYN003.edf,SYN003_hypnogram.csv,\n",
    )
    .unwrap();
    let load = load_dataset(&manifest, 30.0).unwrap();
    let ids: Vec<&str> = load.recordings.iter().map(|r| r.subject_id()).collect();
    assert_eq!(ids, ["SYN001", "SYN003"]);
    assert_eq!(load.excluded.len(), 1);
    assert_eq!(load.excluded[0].reason, "corrupt ECG");
    assert!(load.errors.is_empty());

    std::fs::remove_file(dir.path().join("SYN003.edf")).unwrap();
    let load = load_dataset(&manifest, 30.0).unwrap();
    assert_eq!(load.recordings.len(), 1);
    assert_eq!(load.errors.len(), 1);
    assert_eq!(load.errors[0].subject_id, "SYN003");
}

#[test]
fn synthetic_dataset_loads_with_truth() {
    let dir = tempfile::tempdir().unwrap();
    let profile = SynthProfile {
        duration_s: 1200,
        ..SynthProfile::mini()
    };
    let truth = synth::write_dataset(dir.path(), 11, &profile).unwrap();
    assert_eq!(Truth::read(&dir.path().join(synth::TRUTH_FILE)).unwrap(), truth);
    let load = load_dataset(&dir.path().join(synth::MANIFEST_FILE), 30.0).unwrap();
    assert_eq!(load.recordings.len(), 2);
    for (rec, t) in load.recordings.iter().zip(&truth.subjects) {
        assert_eq!(rec.subject_id(), t.subject_id);
        assert_eq!(rec.duration_s(), 1200.0);
        assert_eq!(rec.channels().len(), 3);
        let codes: Vec<i8> = rec
            .hypnogram()
            .stages
            .iter()
            .map(|s: &SleepStage| s.code().map_or(-1, |c| c as i8))
            .collect();
        assert_eq!(codes, t.stages);
        for ch in rec.channels() {
            assert_eq!(ch.samples.len(), 1200 * 256);
        }
    }
}

#[test]
fn hmc_directory_listing_flags_corrupt_ecg() {
    let dir = tempfile::tempdir().unwrap();
    for i in 1..=151 {
        std::fs::write(dir.path().join(format!("SN{i:03}.edf")), b"").unwrap();
        std::fs::write(dir.path().join(format!("SN{i:03}_sleepscoring.edf")), b"").unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), b"").unwrap();
    let m = hmc_manifest(dir.path()).unwrap();
    assert_eq!(m.len(), 151);
    let kept: Vec<_> = m.iter().filter(|e| e.exclude.is_none()).collect();
    assert_eq!(kept.len(), 146);
    for id in HMC_CORRUPT_ECG {
        assert!(m.iter().any(|e| e.subject_id == id && e.exclude.is_some()));
    }
    assert_eq!(m[0].hypnogram_path.to_str(), Some("SN001_sleepscoring.edf"));
}
