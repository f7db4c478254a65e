//! Yeo-Johnson response transform and the long-format feature table.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::ecg::{process_ecg, EcgConfig, HrvEpoch};
use crate::eeg::{process_eeg, Band, EegConfig, EegEpoch, Electrode};
use crate::ingest::{Recording, SleepStage};
use crate::{Error, Result};

/// Yeo-Johnson power transform.
pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return x;
    }
    if x >= 0.0 {
        if lambda == 0.0 {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else {
        let m = 2.0 - lambda;
        if m == 0.0 {
            -(-x).ln_1p()
        } else {
            -(m * (-x).ln_1p()).exp_m1() / m
        }
    }
}

/// Inverse of [`yeo_johnson`] for fixed `lambda`; NaN outside the image.
pub fn yeo_johnson_inverse(y: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return y;
    }
    if y >= 0.0 {
        if lambda == 0.0 {
            y.exp_m1()
        } else {
            ((lambda * y).ln_1p() / lambda).exp_m1()
        }
    } else {
        let m = 2.0 - lambda;
        if m == 0.0 {
            -(-y).exp_m1()
        } else {
            -((-m * y).ln_1p() / m).exp_m1()
        }
    }
}

/// Gaussian profile log-likelihood of the transformed sample, including the
/// Jacobian term.
pub fn yeo_johnson_loglik(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let t: Vec<f64> = values.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let jac: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    let ll = -0.5 * n * var.ln() + (lambda - 1.0) * jac;
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

pub const LAMBDA_RANGE: (f64, f64) = (-5.0, 5.0);

/// Maximum-likelihood `lambda` on `[-5, 5]`: grid search at 0.05 then
/// golden-section refinement to 1e-6. Constant input gives 1 with a warning.
pub fn fit_lambda(values: &[f64]) -> Result<f64> {
    if values.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 values to fit the transform, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in transform input".into()));
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        warn!("constant input to transform fit; using lambda = 1");
        return Ok(1.0);
    }
    let f = |l: f64| yeo_johnson_loglik(values, l);
    let (lo, hi) = LAMBDA_RANGE;
    let step = 0.05;
    let steps = ((hi - lo) / step).round() as usize;
    let grid_best = (0..=steps)
        .map(|i| lo + i as f64 * step)
        .map(|l| (l, f(l)))
        .fold((lo, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    let (mut a, mut b) = ((grid_best.0 - step).max(lo), (grid_best.0 + step).min(hi));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    Ok(if f(mid) >= grid_best.1 { mid } else { grid_best.0 })
}

/// One analyzable epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub epoch_index: usize,
    pub stage: SleepStage,
    /// Relative band powers, `[C3, C4]` by [`Band::ALL`].
    pub eeg: [[f64; 5]; 2],
    pub hf_abs: f64,
    pub hf_norm: f64,
    pub hf_yj: f64,
}

impl FeatureRow {
    pub fn band(&self, electrode: Electrode, band: Band) -> f64 {
        self.eeg[electrode as usize][band as usize]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub lambda_yj: f64,
    pub provenance: Provenance,
}

/// All per-epoch outputs for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEpochs {
    pub subject_id: String,
    pub stages: Vec<SleepStage>,
    pub hrv: Vec<HrvEpoch>,
    pub c3: Vec<EegEpoch>,
    pub c4: Vec<EegEpoch>,
}

/// Run the ECG and both EEG pipelines on one recording. A recording with
/// no valid HRV epoch is an error naming the dominant invalid reason.
pub fn extract_subject(recording: &Recording, ecg: &EcgConfig, eeg: &EegConfig) -> Result<SubjectEpochs> {
    let hrv = process_ecg(recording, ecg)?;
    if !hrv.iter().any(HrvEpoch::is_valid) {
        let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &hrv {
            if let Some(r) = e.invalid_reason {
                *reasons.entry(r.code()).or_default() += 1;
            }
        }
        let worst = reasons
            .iter()
            .max_by_key(|(_, &n)| n)
            .map_or("no epochs", |(r, _)| r);
        return Err(Error::InvalidRecording {
            subject: recording.subject_id().to_string(),
            reason: format!("no valid ECG epochs ({worst})"),
        });
    }
    Ok(SubjectEpochs {
        subject_id: recording.subject_id().to_string(),
        stages: recording.hypnogram().stages.clone(),
        hrv,
        c3: process_eeg(recording, Electrode::C3, eeg)?,
        c4: process_eeg(recording, Electrode::C4, eeg)?,
    })
}

pub const CSV_HEADER: [&str; 16] = [
    "subject", "epoch", "stage", "c3_delta", "c3_theta", "c3_alpha", "c3_beta", "c3_gamma", "c4_delta",
    "c4_theta", "c4_alpha", "c4_beta", "c4_gamma", "hf_abs", "hf_norm", "hf_yj",
];

/// Inner join of HRV and both EEG electrodes on epoch index, keeping scored
/// epochs valid on all three. `lambda` fixes the transform parameter;
/// otherwise it is fitted once on the pooled `hf_norm`.
pub fn build_table(subjects: &[SubjectEpochs], lambda: Option<f64>) -> Result<FeatureTable> {
    let mut rows = Vec::new();
    for s in subjects {
        let hrv: HashMap<usize, &HrvEpoch> = s.hrv.iter().map(|e| (e.epoch_index, e)).collect();
        let c3: HashMap<usize, &EegEpoch> = s.c3.iter().map(|e| (e.epoch_index, e)).collect();
        let c4: HashMap<usize, &EegEpoch> = s.c4.iter().map(|e| (e.epoch_index, e)).collect();
        for (i, &stage) in s.stages.iter().enumerate() {
            if !stage.is_scored() {
                continue;
            }
            let (Some(h), Some(a), Some(b)) = (hrv.get(&i), c3.get(&i), c4.get(&i)) else {
                continue;
            };
            let (Some(hp), Some(ap), Some(bp)) = (h.power, a.powers, b.powers) else {
                continue;
            };
            rows.push(FeatureRow {
                subject_id: s.subject_id.clone(),
                epoch_index: i,
                stage,
                eeg: [ap.rel, bp.rel],
                hf_abs: hp.hf_abs,
                hf_norm: hp.hf_norm,
                hf_yj: f64::NAN,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::NoAnalyzableRows);
    }
    rows.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then(a.epoch_index.cmp(&b.epoch_index))
    });
    let lambda_yj = match lambda {
        Some(l) => l,
        None => {
            let pooled: Vec<f64> = rows.iter().map(|r| r.hf_norm).collect();
            if pooled.len() < 10 {
                warn!("only {} rows; using lambda = 1", pooled.len());
                1.0
            } else {
                fit_lambda(&pooled)?
            }
        }
    };
    for r in &mut rows {
        r.hf_yj = yeo_johnson(r.hf_norm, lambda_yj);
    }
    Ok(FeatureTable {
        rows,
        lambda_yj,
        provenance: Provenance::default(),
    })
}

impl FeatureTable {
    /// Epoch counts per subject and scored stage, in [`SleepStage::SCORED`] order.
    pub fn stage_counts(&self) -> BTreeMap<String, [usize; 5]> {
        let mut out: BTreeMap<String, [usize; 5]> = BTreeMap::new();
        for r in &self.rows {
            if let Some(c) = r.stage.code() {
                out.entry(r.subject_id.clone()).or_default()[c as usize] += 1;
            }
        }
        out
    }

    pub fn subjects(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.rows.iter().map(|r| r.subject_id.as_str()).collect();
        v.dedup();
        v
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone(),
                r.epoch_index.to_string(),
                r.stage.code().map(|c| c.to_string()).unwrap_or_default(),
            ];
            rec.extend(r.eeg.iter().flatten().map(|v| v.to_string()));
            rec.extend([r.hf_abs, r.hf_norm, r.hf_yj].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<feature table>", e))?;
        Ok(())
    }

    /// Read the canonical CSV. `lambda_yj` is not stored in the file and is
    /// set to NaN; provenance is left empty.
    pub fn read_csv<R: Read>(input: R) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::InvalidInput(format!("unexpected feature table header {header:?}")));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::InvalidInput(format!("feature table row {}: bad {what}", line + 1));
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| bad(CSV_HEADER[i]))
            };
            let stage = rec[2]
                .parse::<i64>()
                .ok()
                .and_then(SleepStage::from_code)
                .filter(|s| s.is_scored())
                .ok_or_else(|| bad("stage"))?;
            let mut eeg = [[0.0; 5]; 2];
            for e in 0..2 {
                for b in 0..5 {
                    eeg[e][b] = num(3 + 5 * e + b)?;
                }
            }
            rows.push(FeatureRow {
                subject_id: rec[0].to_string(),
                epoch_index: rec[1].parse().map_err(|_| bad("epoch"))?,
                stage,
                eeg,
                hf_abs: num(13)?,
                hf_norm: num(14)?,
                hf_yj: num(15)?,
            });
        }
        Ok(FeatureTable {
            rows,
            lambda_yj: f64::NAN,
            provenance: Provenance::default(),
        })
    }
}
