use serde::{Deserialize, Serialize};

use super::hypnogram::Hypnogram;
use crate::{Error, Result};

/// One calibrated signal in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal {
    pub label: String,
    pub physical_dimension: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl ChannelSignal {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Samples in `[start_s, start_s + len_s)`, or `None` when the span is
    /// not fully covered by the recording.
    pub fn window(&self, start_s: f64, len_s: f64) -> Option<&[f64]> {
        let a = (start_s * self.sample_rate_hz).round();
        let n = (len_s * self.sample_rate_hz).round() as usize;
        if a < 0.0 {
            return None;
        }
        let a = a as usize;
        self.samples.get(a..a + n)
    }
}

/// The channels this analysis reads from a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRole {
    C3,
    C4,
    Ecg,
}

impl ChannelRole {
    /// Accepted label prefixes after normalization.
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            ChannelRole::C3 => &["C3-M2", "C3"],
            ChannelRole::C4 => &["C4-M1", "C4"],
            ChannelRole::Ecg => &["ECG", "EKG"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelRole::C3 => "C3",
            ChannelRole::C4 => "C4",
            ChannelRole::Ecg => "ECG",
        }
    }

    /// Case-insensitive prefix match. A leading `EEG ` modality tag is
    /// ignored and `/` is read as `-`, so "EEG C3-M2", "c3/m2" and "C3"
    /// all match [`ChannelRole::C3`].
    pub fn matches(self, label: &str) -> bool {
        let norm = normalize_label(label);
        self.prefixes().iter().any(|p| norm.starts_with(p))
    }
}

impl std::fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_label(label: &str) -> String {
    let upper = label.trim().to_ascii_uppercase().replace('/', "-");
    match upper.strip_prefix("EEG") {
        Some(rest) if rest.starts_with([' ', '-', '_']) => rest[1..].trim_start().to_string(),
        _ => upper,
    }
}

/// A validated overnight recording for one subject.
#[derive(Debug, Clone)]
pub struct Recording {
    subject_id: String,
    channels: Vec<ChannelSignal>,
    hypnogram: Hypnogram,
    duration_s: f64,
}

impl Recording {
    /// Validates the channel and hypnogram invariants.
    ///
    /// `duration_s` is the recording length declared by the container
    /// (records x record duration for EDF).
    pub fn new(
        subject_id: impl Into<String>,
        channels: Vec<ChannelSignal>,
        hypnogram: Hypnogram,
        duration_s: f64,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        let invalid = |reason: String| Error::InvalidRecording {
            subject: subject_id.clone(),
            reason,
        };
        if subject_id.trim().is_empty() {
            return Err(invalid("empty subject id".into()));
        }
        for ch in &channels {
            if !(ch.sample_rate_hz > 0.0 && ch.sample_rate_hz.is_finite()) {
                return Err(invalid(format!(
                    "channel {} has sample rate {}",
                    ch.label, ch.sample_rate_hz
                )));
            }
            if let Some(i) = ch.samples.iter().position(|x| !x.is_finite()) {
                return Err(invalid(format!(
                    "channel {} has a non-finite sample at index {i}",
                    ch.label
                )));
            }
            let expected = (duration_s * ch.sample_rate_hz).round() as usize;
            if ch.samples.len() != expected {
                return Err(invalid(format!(
                    "channel {} holds {} samples, expected {expected} for {duration_s} s",
                    ch.label,
                    ch.samples.len()
                )));
            }
        }
        let scored_s = hypnogram.len() as f64 * hypnogram.epoch_len_s;
        if scored_s > duration_s + hypnogram.epoch_len_s + 1e-9 {
            return Err(invalid(format!(
                "hypnogram covers {scored_s} s but the recording lasts {duration_s} s"
            )));
        }
        Ok(Recording {
            subject_id,
            channels,
            hypnogram,
            duration_s,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn channels(&self) -> &[ChannelSignal] {
        &self.channels
    }

    pub fn hypnogram(&self) -> &Hypnogram {
        &self.hypnogram
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    /// First channel whose label matches `role`.
    pub fn channel(&self, role: ChannelRole) -> Option<&ChannelSignal> {
        self.channels.iter().find(|c| role.matches(&c.label))
    }

    pub fn require_channel(&self, role: ChannelRole) -> Result<&ChannelSignal> {
        self.channel(role).ok_or_else(|| Error::MissingChannel {
            subject: self.subject_id.clone(),
            role: role.to_string(),
        })
    }
}
