//! Sleep-stage scorings.
//!
//! Two input formats are read: a CSV of `epoch_index,stage_code` rows (the
//! canonical format, header optional) and an EDF+ file carrying
//! `Sleep stage ...` annotations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::edf::{looks_like_edf, parse_edf, EdfError};

#[derive(Debug, Error, PartialEq)]
pub enum HypnogramError {
    #[error("hypnogram is empty")]
    Empty,
    #[error("line {line}: epoch index {index} does not follow {previous}")]
    NonMonotone {
        line: usize,
        index: i64,
        previous: i64,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("epoch length must be positive, got {0}")]
    EpochLength(f64),
    #[error("hypnogram EDF: {0}")]
    Edf(#[from] EdfError),
}

/// Scored sleep stage. Codes 0-4 map to Wake, N1, N2, N3, REM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    Wake,
    N1,
    N2,
    N3,
    Rem,
    Unscored,
}

impl SleepStage {
    pub const SCORED: [SleepStage; 5] = [
        SleepStage::Wake,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(SleepStage::Wake),
            1 => Some(SleepStage::N1),
            2 => Some(SleepStage::N2),
            3 => Some(SleepStage::N3),
            4 => Some(SleepStage::Rem),
            _ => None,
        }
    }

    pub fn code(self) -> Option<u8> {
        match self {
            SleepStage::Wake => Some(0),
            SleepStage::N1 => Some(1),
            SleepStage::N2 => Some(2),
            SleepStage::N3 => Some(3),
            SleepStage::Rem => Some(4),
            SleepStage::Unscored => None,
        }
    }

    pub fn is_scored(self) -> bool {
        self != SleepStage::Unscored
    }

    pub fn label(self) -> &'static str {
        match self {
            SleepStage::Wake => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
            SleepStage::Unscored => "?",
        }
    }

    /// Parse a stage name such as `W`, `N2`, `REM`, `R` or `stage 3`.
    /// R&K stage 4 folds into N3.
    pub fn from_label(label: &str) -> Option<Self> {
        let l = label.trim().to_ascii_uppercase();
        let l = l
            .strip_prefix("SLEEP STAGE")
            .or_else(|| l.strip_prefix("STAGE"))
            .unwrap_or(&l)
            .trim();
        match l {
            "W" | "WAKE" => Some(SleepStage::Wake),
            "N1" | "1" | "S1" => Some(SleepStage::N1),
            "N2" | "2" | "S2" => Some(SleepStage::N2),
            "N3" | "3" | "S3" | "4" | "S4" | "N4" => Some(SleepStage::N3),
            "R" | "REM" => Some(SleepStage::Rem),
            _ => None,
        }
    }
}

impl std::fmt::Display for SleepStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypnogram {
    pub epoch_len_s: f64,
    pub stages: Vec<SleepStage>,
}

impl Hypnogram {
    pub fn new(epoch_len_s: f64, stages: Vec<SleepStage>) -> Self {
        Hypnogram {
            epoch_len_s,
            stages,
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn epoch_start_s(&self, epoch: usize) -> f64 {
        epoch as f64 * self.epoch_len_s
    }

    /// Canonical CSV. Unscored epochs are written with code `-1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch_index,stage_code\n");
        for (i, s) in self.stages.iter().enumerate() {
            match s.code() {
                Some(c) => out.push_str(&format!("{i},{c}\n")),
                None => out.push_str(&format!("{i},-1\n")),
            }
        }
        out
    }

    /// Number of epochs per scored stage, in [`SleepStage::SCORED`] order.
    pub fn stage_counts(&self) -> [usize; 5] {
        let mut counts = [0; 5];
        for s in &self.stages {
            if let Some(c) = s.code() {
                counts[c as usize] += 1;
            }
        }
        counts
    }
}

/// Parse a hypnogram, logging warnings for labels mapped to Unscored.
pub fn parse_hypnogram(bytes: &[u8], epoch_len_s: f64) -> Result<Hypnogram, HypnogramError> {
    let (hyp, warnings) = parse_hypnogram_with_warnings(bytes, epoch_len_s)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(hyp)
}

/// Like [`parse_hypnogram`] but returns the warnings instead of logging.
pub fn parse_hypnogram_with_warnings(
    bytes: &[u8],
    epoch_len_s: f64,
) -> Result<(Hypnogram, Vec<String>), HypnogramError> {
    if !(epoch_len_s > 0.0 && epoch_len_s.is_finite()) {
        return Err(HypnogramError::EpochLength(epoch_len_s));
    }
    if looks_like_edf(bytes) {
        parse_edf_annotations(bytes, epoch_len_s)
    } else {
        parse_csv(bytes, epoch_len_s)
    }
}

fn parse_csv(bytes: &[u8], epoch_len_s: f64) -> Result<(Hypnogram, Vec<String>), HypnogramError> {
    let text = String::from_utf8_lossy(bytes);
    let mut warnings = Vec::new();
    let mut stages = Vec::new();
    let mut previous: Option<i64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(idx), Some(code)) = (fields.next(), fields.next()) else {
            return Err(HypnogramError::Malformed {
                line: line_no,
                message: format!("expected `epoch_index,stage_code`, got {line:?}"),
            });
        };
        let index: i64 = match idx.parse() {
            Ok(i) => i,
            Err(_) if previous.is_none() && stages.is_empty() => continue, // header row
            Err(_) => {
                return Err(HypnogramError::Malformed {
                    line: line_no,
                    message: format!("epoch index {idx:?} is not an integer"),
                })
            }
        };
        if index < 0 {
            return Err(HypnogramError::Malformed {
                line: line_no,
                message: format!("negative epoch index {index}"),
            });
        }
        if let Some(p) = previous {
            if index <= p {
                return Err(HypnogramError::NonMonotone {
                    line: line_no,
                    index,
                    previous: p,
                });
            }
        }
        let stage = match code.parse::<i64>() {
            Ok(c) => SleepStage::from_code(c).unwrap_or_else(|| {
                if c != -1 {
                    warnings.push(format!(
                        "line {line_no}: stage code {c} outside 0-4, epoch {index} marked unscored"
                    ));
                }
                SleepStage::Unscored
            }),
            Err(_) => SleepStage::from_label(code).unwrap_or_else(|| {
                if code != "?" {
                    warnings.push(format!(
                        "line {line_no}: unknown stage label {code:?}, epoch {index} marked unscored"
                    ));
                }
                SleepStage::Unscored
            }),
        };
        // Gaps in the index sequence are unscored epochs.
        stages.resize(index as usize, SleepStage::Unscored);
        stages.push(stage);
        previous = Some(index);
    }
    if stages.is_empty() {
        return Err(HypnogramError::Empty);
    }
    Ok((Hypnogram::new(epoch_len_s, stages), warnings))
}

fn parse_edf_annotations(
    bytes: &[u8],
    epoch_len_s: f64,
) -> Result<(Hypnogram, Vec<String>), HypnogramError> {
    let edf = parse_edf(bytes)?;
    let mut warnings = Vec::new();
    let mut scored: Vec<(f64, f64, SleepStage)> = Vec::new();
    for a in &edf.annotations {
        let upper = a.text.trim().to_ascii_uppercase();
        if !upper.starts_with("SLEEP STAGE") {
            continue;
        }
        let stage = SleepStage::from_label(&a.text).unwrap_or_else(|| {
            if !upper.ends_with('?') {
                warnings.push(format!(
                    "unknown stage annotation {:?} at {} s, marked unscored",
                    a.text, a.onset_s
                ));
            }
            SleepStage::Unscored
        });
        scored.push((a.onset_s, a.duration_s.unwrap_or(epoch_len_s), stage));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut stages = Vec::new();
    for (onset, duration, stage) in scored {
        let first = (onset / epoch_len_s).round().max(0.0) as usize;
        let n = ((duration / epoch_len_s).round() as usize).max(1);
        if stages.len() < first + n {
            stages.resize(first + n, SleepStage::Unscored);
        }
        stages[first..first + n].fill(stage);
    }
    if stages.is_empty() {
        return Err(HypnogramError::Empty);
    }
    Ok((Hypnogram::new(epoch_len_s, stages), warnings))
}
