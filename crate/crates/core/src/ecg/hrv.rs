use serde::{Deserialize, Serialize};

use super::detect::BeatSeries;
use crate::dsp::{design_bandpass, linear_interp, modwpt, DspError, FilterSpec, Wavelet};

/// Parameters of the RRI-to-HF-power chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrvConfig {
    pub interp_hz: f64,
    pub filter_order: usize,
    pub filter_low_hz: f64,
    pub filter_high_hz: f64,
    pub zero_phase: bool,
    pub modwpt_level: usize,
    pub hf_low_hz: f64,
    pub hf_high_hz: f64,
    pub total_low_hz: f64,
    pub total_high_hz: f64,
    pub min_beats: usize,
    pub rri_min_ms: f64,
    pub rri_max_ms: f64,
}

impl Default for HrvConfig {
    fn default() -> Self {
        HrvConfig {
            interp_hz: 4.0,
            filter_order: 4,
            filter_low_hz: 0.04,
            filter_high_hz: 0.4,
            zero_phase: false,
            modwpt_level: 4,
            hf_low_hz: 0.15,
            hf_high_hz: 0.4,
            total_low_hz: 0.04,
            total_high_hz: 0.4,
            min_beats: 10,
            rri_min_ms: 300.0,
            rri_max_ms: 2000.0,
        }
    }
}

/// RRI knots: knot `i` sits at beat `i + 1` and holds the preceding interval in ms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RriSeries {
    pub times_s: Vec<f64>,
    pub rri_ms: Vec<f64>,
}

impl RriSeries {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }
}

pub fn rri_series(beats: &BeatSeries) -> RriSeries {
    let t = &beats.beat_times_s;
    RriSeries {
        times_s: t.iter().skip(1).copied().collect(),
        rri_ms: t.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    InsufficientBeats,
    RriOutOfRange,
    NoPower,
    MissingSignal,
}

impl InvalidReason {
    pub fn code(self) -> &'static str {
        match self {
            InvalidReason::InsufficientBeats => "insufficient_beats",
            InvalidReason::RriOutOfRange => "rri_out_of_range",
            InvalidReason::NoPower => "no_power",
            InvalidReason::MissingSignal => "missing_signal",
        }
    }
}

impl std::fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvPower {
    pub hf_abs: f64,
    pub total_abs: f64,
    pub hf_norm: f64,
}

/// HF-HRV result for one epoch. `power` is present exactly when the epoch is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvEpoch {
    pub epoch_index: usize,
    pub n_beats: usize,
    pub power: Option<HrvPower>,
    pub invalid_reason: Option<InvalidReason>,
}

impl HrvEpoch {
    pub fn is_valid(&self) -> bool {
        self.power.is_some()
    }

    pub fn invalid(epoch_index: usize, n_beats: usize, reason: InvalidReason) -> Self {
        HrvEpoch {
            epoch_index,
            n_beats,
            power: None,
            invalid_reason: Some(reason),
        }
    }
}

/// Validity gate on the beats of one epoch.
pub fn check_beats(beats: &BeatSeries, config: &HrvConfig) -> Result<RriSeries, InvalidReason> {
    if beats.len() < config.min_beats.max(3) {
        return Err(InvalidReason::InsufficientBeats);
    }
    let rri = rri_series(beats);
    if rri
        .rri_ms
        .iter()
        .any(|&v| !(v >= config.rri_min_ms && v <= config.rri_max_ms))
    {
        return Err(InvalidReason::RriOutOfRange);
    }
    Ok(rri)
}

/// Interpolate the RRI over `[start_s, start_s + len_s)`, remove the mean,
/// band-pass, decompose, and sum overlap-weighted node energies.
pub fn epoch_hf_power(
    rri: &RriSeries,
    start_s: f64,
    len_s: f64,
    config: &HrvConfig,
) -> Result<Option<HrvPower>, DspError> {
    let n = (len_s * config.interp_hz).round() as usize;
    if n == 0 {
        return Err(DspError::InvalidParameter(format!("epoch length {len_s} s")));
    }
    let t1 = start_s + (n - 1) as f64 / config.interp_hz;
    let mut x = linear_interp(&rri.times_s, &rri.rri_ms, config.interp_hz, start_s, t1)?;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in &mut x {
        *v -= mean;
    }
    let filter = design_bandpass(&FilterSpec::butterworth_bandpass(
        config.filter_order,
        config.filter_low_hz,
        config.filter_high_hz,
        config.interp_hz,
    ))?;
    let y = if config.zero_phase {
        filter.apply_zero_phase(&x)
    } else {
        filter.apply(&x)
    };
    let tree = modwpt(&y, config.interp_hz, config.modwpt_level, Wavelet::Db2)?;
    let hf_abs = tree.weighted_energy(config.hf_low_hz, config.hf_high_hz);
    let total_abs = tree.weighted_energy(config.total_low_hz, config.total_high_hz);
    if !(total_abs > 0.0) || !total_abs.is_finite() {
        return Ok(None);
    }
    Ok(Some(HrvPower {
        hf_abs,
        total_abs,
        hf_norm: (hf_abs / total_abs).clamp(0.0, 1.0),
    }))
}
