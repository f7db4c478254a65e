//! Per-epoch relative EEG band powers from a median Welch spectrum.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{band_power, welch_psd, WelchConfig};
use crate::ingest::{ChannelRole, Recording};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Band::Delta => "Delta",
            Band::Theta => "Theta",
            Band::Alpha => "Alpha",
            Band::Beta => "Beta",
            Band::Gamma => "Gamma",
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Half-open frequency band `[lo_hz, hi_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub name: Band,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

pub const DEFAULT_BANDS: [BandDefinition; 5] = [
    BandDefinition { name: Band::Delta, lo_hz: 1.0, hi_hz: 4.0 },
    BandDefinition { name: Band::Theta, lo_hz: 4.0, hi_hz: 8.0 },
    BandDefinition { name: Band::Alpha, lo_hz: 8.0, hi_hz: 12.0 },
    BandDefinition { name: Band::Beta, lo_hz: 12.0, hi_hz: 30.0 },
    BandDefinition { name: Band::Gamma, lo_hz: 30.0, hi_hz: 80.0 },
];

/// What relative powers are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Denominator {
    /// Sum of the band powers; relative powers sum to 1.
    BandUnion,
    /// Integrated power over `[lo_hz, hi_hz]`.
    Range { lo_hz: f64, hi_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Electrode {
    C3,
    C4,
}

impl Electrode {
    pub const ALL: [Electrode; 2] = [Electrode::C3, Electrode::C4];

    pub fn role(self) -> ChannelRole {
        match self {
            Electrode::C3 => ChannelRole::C3,
            Electrode::C4 => ChannelRole::C4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Electrode::C3 => "C3",
            Electrode::C4 => "C4",
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Electrode::C3 => "c3",
            Electrode::C4 => "c4",
        }
    }
}

impl std::fmt::Display for Electrode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegConfig {
    pub bands: [BandDefinition; 5],
    pub welch: WelchConfig,
    pub denominator: Denominator,
}

impl Default for EegConfig {
    fn default() -> Self {
        EegConfig {
            bands: DEFAULT_BANDS,
            welch: WelchConfig::default(),
            denominator: Denominator::BandUnion,
        }
    }
}

impl EegConfig {
    pub fn validate(&self) -> Result<()> {
        for (def, want) in self.bands.iter().zip(Band::ALL) {
            if def.name != want || !(def.lo_hz >= 0.0 && def.hi_hz > def.lo_hz) {
                return Err(Error::InvalidInput(format!("invalid band definition {def:?}")));
            }
        }
        if self.bands.windows(2).any(|w| w[1].lo_hz < w[0].hi_hz) {
            return Err(Error::InvalidInput("bands must be increasing and non-overlapping".into()));
        }
        if let Denominator::Range { lo_hz, hi_hz } = self.denominator {
            if !(hi_hz > lo_hz && lo_hz >= 0.0) {
                return Err(Error::InvalidInput(format!("invalid denominator range [{lo_hz}, {hi_hz}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPowers {
    pub abs: [f64; 5],
    pub rel: [f64; 5],
    /// Denominator of `rel`.
    pub total_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegEpoch {
    pub epoch_index: usize,
    pub electrode: Electrode,
    /// Present exactly when the epoch is valid.
    pub powers: Option<BandPowers>,
}

impl EegEpoch {
    pub fn is_valid(&self) -> bool {
        self.powers.is_some()
    }
}

/// Band powers of one window; `None` for non-finite, silent or too short input.
pub fn epoch_band_powers(window: &[f64], fs: f64, config: &EegConfig) -> Option<BandPowers> {
    if window.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let spec = welch_psd(window, fs, &config.welch).ok()?;
    let mut abs = [0.0; 5];
    for (a, b) in abs.iter_mut().zip(&config.bands) {
        *a = band_power(&spec, b.lo_hz, b.hi_hz);
    }
    let total_abs = match config.denominator {
        Denominator::BandUnion => abs.iter().sum(),
        Denominator::Range { lo_hz, hi_hz } => band_power(&spec, lo_hz, hi_hz),
    };
    if !(total_abs > 0.0) || !total_abs.is_finite() {
        return None;
    }
    let rel = abs.map(|a| (a / total_abs).clamp(0.0, 1.0));
    Some(BandPowers { abs, rel, total_abs })
}

/// One [`EegEpoch`] per hypnogram epoch, in epoch order.
pub fn process_eeg(recording: &Recording, electrode: Electrode, config: &EegConfig) -> Result<Vec<EegEpoch>> {
    config.validate()?;
    let channel = recording.require_channel(electrode.role())?;
    let hyp = recording.hypnogram();
    let fs = channel.sample_rate_hz;
    Ok((0..hyp.len())
        .into_par_iter()
        .map(|i| EegEpoch {
            epoch_index: i,
            electrode,
            powers: channel
                .window(hyp.epoch_start_s(i), hyp.epoch_len_s)
                .and_then(|w| epoch_band_powers(w, fs, config)),
        })
        .collect())
}

/// Debug dump with header `subject,epoch,electrode,delta,theta,alpha,beta,gamma,total_abs,valid`.
pub fn write_eeg_debug_csv<W: Write>(out: W, subject: &str, epochs: &[EegEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "subject", "epoch", "electrode", "delta", "theta", "alpha", "beta", "gamma", "total_abs", "valid",
    ])?;
    for e in epochs {
        let mut rec = vec![subject.to_string(), e.epoch_index.to_string(), e.electrode.to_string()];
        match &e.powers {
            Some(p) => {
                rec.extend(p.rel.iter().map(|v| v.to_string()));
                rec.push(p.total_abs.to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(e.is_valid().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<eeg debug>", e))?;
    Ok(())
}
