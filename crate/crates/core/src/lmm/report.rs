use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::design::{ModelDesign, Term};
use super::reml::ModelFit;
use super::StatsError;
use crate::dist::t_two_sided_p;
use crate::eeg::{Band, Electrode};
use crate::ingest::SleepStage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub stage: SleepStage,
    pub electrode: Electrode,
    pub band: Band,
    pub estimate: f64,
    pub std_error: f64,
    pub t_ratio: f64,
    pub p: f64,
}

/// Stage-specific slopes (`main + interaction`) and difference-from-reference
/// contrasts (`interaction` alone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub slopes: Vec<EffectRow>,
    pub contrasts: Vec<EffectRow>,
}

fn linear_combination(fit: &ModelFit, weights: &[(usize, f64)]) -> (f64, f64) {
    let est = weights.iter().map(|&(i, w)| w * fit.beta[i]).sum();
    let mut var = 0.0;
    for &(i, wi) in weights {
        for &(j, wj) in weights {
            var += wi * wj * fit.cov(i, j);
        }
    }
    (est, var.max(0.0).sqrt())
}

fn row(fit: &ModelFit, stage: SleepStage, electrode: Electrode, band: Band, est: f64, se: f64) -> Result<EffectRow, StatsError> {
    let t_ratio = est / se;
    let p = t_two_sided_p(t_ratio, fit.df_resid as f64)?;
    Ok(EffectRow {
        stage,
        electrode,
        band,
        estimate: est,
        std_error: se,
        t_ratio,
        p,
    })
}

pub fn stage_slopes(fit: &ModelFit, model: &ModelDesign) -> Result<EffectReport, StatsError> {
    let spec = &model.spec;
    let mut slopes = Vec::new();
    let mut contrasts = Vec::new();
    for stage in SleepStage::SCORED {
        for cov in spec.covariate_list() {
            let Some(main) = model.column_of(Term::Main(cov)) else {
                continue;
            };
            if stage == spec.reference {
                let (est, se) = linear_combination(fit, &[(main, 1.0)]);
                slopes.push(row(fit, stage, cov.electrode, cov.band, est, se)?);
                continue;
            }
            let Some(inter) = model.column_of(Term::Interaction(cov, stage)) else {
                continue;
            };
            let (est, se) = linear_combination(fit, &[(main, 1.0), (inter, 1.0)]);
            slopes.push(row(fit, stage, cov.electrode, cov.band, est, se)?);
            let (est, se) = linear_combination(fit, &[(inter, 1.0)]);
            contrasts.push(row(fit, stage, cov.electrode, cov.band, est, se)?);
        }
    }
    Ok(EffectReport { slopes, contrasts })
}

/// CSV with header `stage,electrode,band,estimate,std_error,t_ratio,p`.
pub fn write_effects_csv<W: Write>(out: W, rows: &[EffectRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "electrode", "band", "estimate", "std_error", "t_ratio", "p"])?;
    for r in rows {
        w.write_record([
            r.stage.label().to_string(),
            r.electrode.to_string(),
            r.band.title().to_string(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.t_ratio.to_string(),
            r.p.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<effects>", e))?;
    Ok(())
}

pub const TABLE_HEADER: [&str; 7] = [
    "Sleep Stage",
    "Electrode",
    "EEG Band",
    "Estimate",
    "Std Error",
    "t Ratio",
    "Prob > t",
];

/// Tab-separated table in the usual statistics-package layout.
pub fn write_effect_table<W: Write>(mut out: W, rows: &[EffectRow]) -> std::io::Result<()> {
    writeln!(out, "{}", TABLE_HEADER.join("\t"))?;
    for r in rows {
        let p = if r.p < 1e-4 {
            "<.0001".to_string()
        } else {
            format!("{:.4}", r.p)
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{:.7}\t{:.7}\t{:.2}\t{}",
            stage_title(r.stage),
            r.electrode,
            r.band.title(),
            r.estimate,
            r.std_error,
            r.t_ratio,
            p
        )?;
    }
    Ok(())
}

fn stage_title(s: SleepStage) -> &'static str {
    match s {
        SleepStage::Wake => "Wake",
        SleepStage::N1 => "NREM1",
        SleepStage::N2 => "NREM2",
        SleepStage::N3 => "NREM3",
        SleepStage::Rem => "REM",
        SleepStage::Unscored => "Unscored",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins over `[min, max]`; the last bin is closed.
    pub fn new(values: &[f64], bins: usize) -> Histogram {
        let bins = bins.max(1);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Histogram {
                edges: vec![0.0, 1.0],
                counts: vec![0],
            };
        }
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Conditional residual summaries for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub histogram: Histogram,
    /// `(theoretical normal quantile, ordered standardized residual)`.
    pub qq: Vec<(f64, f64)>,
    pub qq_correlation: f64,
    pub residual_mean: f64,
    pub residual_sd: f64,
}

/// Conditional residuals `y - X beta - Z u` using the BLUPs in `fit`.
pub fn residual_diagnostics(fit: &ModelFit, design: &super::MixedDesign) -> Diagnostics {
    let n = design.n_obs();
    let p = design.x.ncols();
    let mut fitted = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let mut f: f64 = (0..p).map(|j| design.x[(i, j)] * fit.beta[j]).sum();
        f += fit.blup_subject.get(design.subject[i]).copied().unwrap_or(0.0);
        if let Some(c) = &design.cell {
            f += fit.blup_cell.get(c[i]).copied().unwrap_or(0.0);
        }
        fitted.push(f);
        residuals.push(design.y[i] - f);
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let qq: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let prob = (i as f64 + 1.0 - 0.375) / (n as f64 + 0.25);
            let z = if sd > 0.0 { (r - mean) / sd } else { 0.0 };
            (normal.inverse_cdf(prob), z)
        })
        .collect();
    let qq_correlation = correlation(&qq);
    let bins = ((n as f64).sqrt().ceil() as usize).clamp(5, 60);
    Diagnostics {
        histogram: Histogram::new(&residuals, bins),
        residuals,
        fitted,
        qq,
        qq_correlation,
        residual_mean: mean,
        residual_sd: sd,
    }
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
