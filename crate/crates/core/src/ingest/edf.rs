//! EDF / EDF+C reader and writer.
//!
//! Layout: a 256-byte fixed header, then 256 bytes per signal stored
//! field-major (all labels, then all transducers, ...), then `n_records`
//! data records. Each record holds `samples_per_record` little-endian
//! 16-bit two's-complement samples for every signal in header order.
//!
//! Signals labelled `EDF Annotations` are decoded as time-stamped annotation
//! lists instead of being returned as channels.

use thiserror::Error;

use super::recording::ChannelSignal;

const FIXED_HEADER_LEN: usize = 256;
const SIGNAL_HEADER_LEN: usize = 256;
const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Error, PartialEq)]
pub enum EdfError {
    #[error("EDF header truncated: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("malformed EDF header field `{field}` at byte offset {offset}: {value:?}")]
    Field {
        field: &'static str,
        offset: usize,
        value: String,
    },
    #[error("signal {signal} ({label}): digital range is empty (digital min == digital max == {digital})")]
    DigitalRange {
        signal: usize,
        label: String,
        digital: i32,
    },
    #[error("signal {signal} ({label}): physical range is empty (physical min == physical max)")]
    PhysicalRange { signal: usize, label: String },
    #[error("data record {index} is truncated ({available} of {needed} bytes present)")]
    TruncatedRecord {
        index: usize,
        needed: usize,
        available: usize,
    },
    #[error("discontinuous EDF+D recordings are not supported")]
    Discontinuous,
    #[error("unsupported file format (version field {0:?}); only EDF/EDF+C are read")]
    UnsupportedFormat(String),
    #[error("cannot write EDF: {0}")]
    Write(String),
}

/// Per-signal header entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.digital_min)) * self.gain() + self.physical_min
    }

    fn to_digital(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.gain()).round() + f64::from(self.digital_min);
        d.clamp(f64::from(self.digital_min), f64::from(self.digital_max)) as i16
    }

    /// Header for a 16-bit channel whose physical range covers `samples`.
    ///
    /// The range is rounded outward to values that survive the 8-character
    /// header encoding unchanged.
    pub fn for_samples(
        label: &str,
        physical_dimension: &str,
        samples: &[f64],
        samples_per_record: usize,
    ) -> Result<Self, EdfError> {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if !lo.is_finite() || !hi.is_finite() {
            return Err(EdfError::Write(format!(
                "signal {label} has no finite samples"
            )));
        }
        let (physical_min, physical_max) = encodable_range(lo, hi)?;
        Ok(SignalHeader {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: physical_dimension.to_string(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        })
    }
}

/// Fixed EDF header plus the signal headers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    /// `EDF+C`, `EDF+D` or empty for plain EDF.
    pub reserved: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER_LEN + SIGNAL_HEADER_LEN * self.signals.len()
    }

    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| 2 * s.samples_per_record).sum()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_records as f64 * self.record_duration_s
    }

    pub fn sample_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration_s
    }
}

/// One annotation from an EDF+ annotation signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub text: String,
}

/// A parsed EDF file: calibrated channels plus decoded annotations.
#[derive(Debug, Clone)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub channels: Vec<ChannelSignal>,
    pub annotations: Vec<Annotation>,
}

impl EdfFile {
    pub fn duration_s(&self) -> f64 {
        self.header.duration_s()
    }
}

/// True when `bytes` starts like an EDF header.
pub fn looks_like_edf(bytes: &[u8]) -> bool {
    bytes.len() >= FIXED_HEADER_LEN && bytes.starts_with(b"0       ")
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, name: &'static str, width: usize) -> Result<(usize, String), EdfError> {
        let offset = self.pos;
        let raw = self
            .bytes
            .get(offset..offset + width)
            .ok_or(EdfError::TruncatedHeader {
                needed: offset + width,
                available: self.bytes.len(),
            })?;
        if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(EdfError::Field {
                field: name,
                offset,
                value: String::from_utf8_lossy(raw).into_owned(),
            });
        }
        self.pos += width;
        // Printable ASCII checked above, so this cannot fail.
        let text = std::str::from_utf8(raw).unwrap_or_default();
        Ok((offset, text.trim_end().to_string()))
    }

    fn text(&mut self, name: &'static str, width: usize) -> Result<String, EdfError> {
        Ok(self.field(name, width)?.1)
    }

    fn number<T: std::str::FromStr>(
        &mut self,
        name: &'static str,
        width: usize,
    ) -> Result<T, EdfError> {
        let (offset, text) = self.field(name, width)?;
        text.trim().parse::<T>().map_err(|_| EdfError::Field {
            field: name,
            offset,
            value: text,
        })
    }
}

/// Parse a complete EDF or EDF+C file.
///
/// Physical values are `(d - dig_min) * (phys_max - phys_min) / (dig_max - dig_min) + phys_min`.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile, EdfError> {
    let header = parse_header(bytes)?;
    let record_bytes = header.record_bytes();
    let data = &bytes[header.header_bytes()..];

    let mut channels: Vec<ChannelSignal> = Vec::new();
    let mut channel_of_signal = Vec::with_capacity(header.signals.len());
    for (i, sig) in header.signals.iter().enumerate() {
        if sig.is_annotation() {
            channel_of_signal.push(None);
        } else {
            channel_of_signal.push(Some(channels.len()));
            channels.push(ChannelSignal {
                label: sig.label.clone(),
                physical_dimension: sig.physical_dimension.clone(),
                samples: Vec::with_capacity(header.n_records * sig.samples_per_record),
                sample_rate_hz: header.sample_rate(i),
            });
        }
    }

    let mut annotations = Vec::new();
    for index in 0..header.n_records {
        let start = index * record_bytes;
        let record = data
            .get(start..start + record_bytes)
            .ok_or(EdfError::TruncatedRecord {
                index,
                needed: record_bytes,
                available: data.len().saturating_sub(start),
            })?;
        let mut pos = 0;
        for (sig, channel) in header.signals.iter().zip(&channel_of_signal) {
            let len = 2 * sig.samples_per_record;
            let chunk = &record[pos..pos + len];
            pos += len;
            match channel {
                Some(c) => {
                    let samples = &mut channels[*c].samples;
                    samples.extend(
                        chunk
                            .chunks_exact(2)
                            .map(|b| sig.to_physical(i16::from_le_bytes([b[0], b[1]]))),
                    );
                }
                None => annotations.extend(parse_tals(chunk)),
            }
        }
    }

    Ok(EdfFile {
        header,
        channels,
        annotations,
    })
}

/// Parse only the header block.
pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader, EdfError> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(EdfError::TruncatedHeader {
            needed: FIXED_HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[0] == 0xff {
        return Err(EdfError::UnsupportedFormat("\\xffBIOSEMI".into()));
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.text("version", 8)?;
    if version.trim() != "0" {
        return Err(EdfError::UnsupportedFormat(version));
    }
    let patient_id = cur.text("patient_id", 80)?;
    let recording_id = cur.text("recording_id", 80)?;
    let start_date = cur.text("start_date", 8)?;
    let start_time = cur.text("start_time", 8)?;
    let header_bytes_offset = cur.pos;
    let header_bytes: usize = cur.number("header_bytes", 8)?;
    let reserved = cur.text("reserved", 44)?;
    if reserved.starts_with("EDF+D") {
        return Err(EdfError::Discontinuous);
    }
    let n_records_offset = cur.pos;
    let n_records: i64 = cur.number("n_records", 8)?;
    let duration_offset = cur.pos;
    let record_duration_s: f64 = cur.number("record_duration", 8)?;
    if !(record_duration_s > 0.0 && record_duration_s.is_finite()) {
        return Err(EdfError::Field {
            field: "record_duration",
            offset: duration_offset,
            value: record_duration_s.to_string(),
        });
    }
    let ns_offset = cur.pos;
    let ns: usize = cur.number("n_signals", 4)?;
    if ns == 0 {
        return Err(EdfError::Field {
            field: "n_signals",
            offset: ns_offset,
            value: "0".into(),
        });
    }
    let expected = FIXED_HEADER_LEN + SIGNAL_HEADER_LEN * ns;
    if header_bytes != expected {
        return Err(EdfError::Field {
            field: "header_bytes",
            offset: header_bytes_offset,
            value: format!("{header_bytes} (expected {expected} for {ns} signals)"),
        });
    }
    if bytes.len() < expected {
        return Err(EdfError::TruncatedHeader {
            needed: expected,
            available: bytes.len(),
        });
    }

    let labels = repeat_field(&mut cur, ns, |c| c.text("label", 16))?;
    let transducers = repeat_field(&mut cur, ns, |c| c.text("transducer", 80))?;
    let dims = repeat_field(&mut cur, ns, |c| c.text("physical_dimension", 8))?;
    let pmins = repeat_field(&mut cur, ns, |c| c.number::<f64>("physical_min", 8))?;
    let pmaxs = repeat_field(&mut cur, ns, |c| c.number::<f64>("physical_max", 8))?;
    let dmins = repeat_field(&mut cur, ns, |c| c.number::<i32>("digital_min", 8))?;
    let dmaxs = repeat_field(&mut cur, ns, |c| c.number::<i32>("digital_max", 8))?;
    let prefilters = repeat_field(&mut cur, ns, |c| c.text("prefiltering", 80))?;
    let spr_offset = cur.pos;
    let sprs = repeat_field(&mut cur, ns, |c| c.number::<usize>("samples_per_record", 8))?;
    let sig_reserved = repeat_field(&mut cur, ns, |c| c.text("signal_reserved", 32))?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let sig = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmins[i],
            physical_max: pmaxs[i],
            digital_min: dmins[i],
            digital_max: dmaxs[i],
            prefiltering: prefilters[i].clone(),
            samples_per_record: sprs[i],
            reserved: sig_reserved[i].clone(),
        };
        if sig.samples_per_record == 0 {
            return Err(EdfError::Field {
                field: "samples_per_record",
                offset: spr_offset + 8 * i,
                value: "0".into(),
            });
        }
        if sig.digital_max == sig.digital_min {
            return Err(EdfError::DigitalRange {
                signal: i,
                label: sig.label,
                digital: sig.digital_min,
            });
        }
        if sig.physical_max == sig.physical_min {
            return Err(EdfError::PhysicalRange {
                signal: i,
                label: sig.label,
            });
        }
        signals.push(sig);
    }

    let record_bytes: usize = signals.iter().map(|s| 2 * s.samples_per_record).sum();
    let n_records = match n_records {
        n if n >= 0 => n as usize,
        -1 => (bytes.len() - expected) / record_bytes,
        n => {
            return Err(EdfError::Field {
                field: "n_records",
                offset: n_records_offset,
                value: n.to_string(),
            })
        }
    };

    Ok(EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        reserved,
        n_records,
        record_duration_s,
        signals,
    })
}

fn repeat_field<T>(
    cur: &mut Cursor<'_>,
    ns: usize,
    mut f: impl FnMut(&mut Cursor<'_>) -> Result<T, EdfError>,
) -> Result<Vec<T>, EdfError> {
    (0..ns).map(|_| f(cur)).collect()
}

/// Decode the time-stamped annotation lists of one record.
fn parse_tals(chunk: &[u8]) -> Vec<Annotation> {
    let mut out = Vec::new();
    for tal in chunk.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == 0x14);
        let Some(timing) = parts.next() else { continue };
        let timing = String::from_utf8_lossy(timing);
        let mut timing = timing.split('\u{15}');
        let Some(onset_s) = timing.next().and_then(|s| s.trim().parse::<f64>().ok()) else {
            continue;
        };
        let duration_s = timing.next().and_then(|s| s.trim().parse::<f64>().ok());
        for text in parts.filter(|p| !p.is_empty()) {
            out.push(Annotation {
                onset_s,
                duration_s,
                text: String::from_utf8_lossy(text).into_owned(),
            });
        }
    }
    out
}

/// Format `x` in at most `width` characters, or `None` if impossible.
pub fn format_edf_number(x: f64, width: usize) -> Option<String> {
    let plain = trim_number(format!("{x}"));
    if plain.len() <= width {
        return Some(plain);
    }
    (0..=width)
        .rev()
        .map(|d| trim_number(format!("{x:.d$}")))
        .find(|s| s.len() <= width && s.parse::<f64>().is_ok_and(|v| v != 0.0 || x == 0.0))
}

fn trim_number(s: String) -> String {
    if s.contains('.') && !s.contains('e') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t.is_empty() || t == "-" {
            "0".into()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

/// Physical range covering `[lo, hi]` whose endpoints are exactly
/// representable in the 8-character header fields.
fn encodable_range(lo: f64, hi: f64) -> Result<(f64, f64), EdfError> {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    };
    for decimals in (0..=6).rev() {
        let scale = 10f64.powi(decimals);
        let a = (lo * scale).floor() / scale;
        let b = (hi * scale).ceil() / scale;
        let sa = trim_number(format!("{a:.*}", decimals as usize));
        let sb = trim_number(format!("{b:.*}", decimals as usize));
        if sa.len() <= 8 && sb.len() <= 8 {
            // Parsing can only move by an ulp; both strings are what gets written.
            let (pa, pb) = (sa.parse::<f64>(), sb.parse::<f64>());
            if let (Ok(pa), Ok(pb)) = (pa, pb) {
                if pb > pa {
                    return Ok((pa, pb));
                }
            }
        }
    }
    Err(EdfError::Write(format!(
        "physical range [{lo}, {hi}] does not fit in 8 characters"
    )))
}

fn put_field(out: &mut Vec<u8>, name: &str, value: &str, width: usize) -> Result<(), EdfError> {
    if value.len() > width || !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(EdfError::Write(format!(
            "field {name} value {value:?} does not fit {width} ASCII bytes"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

fn put_number(out: &mut Vec<u8>, name: &str, value: f64, width: usize) -> Result<(), EdfError> {
    let text = format_edf_number(value, width)
        .ok_or_else(|| EdfError::Write(format!("field {name} value {value} not encodable")))?;
    put_field(out, name, &text, width)
}

/// Serialize a header and its signals to EDF bytes.
///
/// `signals[i]` carries the samples for `header.signals[i]`; annotation
/// signals take raw bytes through [`write_annotation_edf`] instead and must
/// not appear here. Every signal must hold exactly
/// `n_records * samples_per_record` samples.
pub fn write_edf(header: &EdfHeader, signals: &[Vec<f64>]) -> Result<Vec<u8>, EdfError> {
    if signals.len() != header.signals.len() {
        return Err(EdfError::Write(format!(
            "{} sample vectors for {} signals",
            signals.len(),
            header.signals.len()
        )));
    }
    for (sig, samples) in header.signals.iter().zip(signals) {
        if samples.len() != header.n_records * sig.samples_per_record {
            return Err(EdfError::Write(format!(
                "signal {} has {} samples, expected {}",
                sig.label,
                samples.len(),
                header.n_records * sig.samples_per_record
            )));
        }
    }
    let mut out = encode_header(header)?;
    out.reserve(header.n_records * header.record_bytes());
    for r in 0..header.n_records {
        for (sig, samples) in header.signals.iter().zip(signals) {
            let spr = sig.samples_per_record;
            for &x in &samples[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&sig.to_digital(x).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn encode_header(header: &EdfHeader) -> Result<Vec<u8>, EdfError> {
    let mut out = Vec::with_capacity(header.header_bytes());
    put_field(&mut out, "version", &header.version, 8)?;
    put_field(&mut out, "patient_id", &header.patient_id, 80)?;
    put_field(&mut out, "recording_id", &header.recording_id, 80)?;
    put_field(&mut out, "start_date", &header.start_date, 8)?;
    put_field(&mut out, "start_time", &header.start_time, 8)?;
    put_field(&mut out, "header_bytes", &header.header_bytes().to_string(), 8)?;
    put_field(&mut out, "reserved", &header.reserved, 44)?;
    put_field(&mut out, "n_records", &header.n_records.to_string(), 8)?;
    put_number(&mut out, "record_duration", header.record_duration_s, 8)?;
    put_field(&mut out, "n_signals", &header.signals.len().to_string(), 4)?;
    let sigs = &header.signals;
    for s in sigs {
        put_field(&mut out, "label", &s.label, 16)?;
    }
    for s in sigs {
        put_field(&mut out, "transducer", &s.transducer, 80)?;
    }
    for s in sigs {
        put_field(&mut out, "physical_dimension", &s.physical_dimension, 8)?;
    }
    for s in sigs {
        put_number(&mut out, "physical_min", s.physical_min, 8)?;
    }
    for s in sigs {
        put_number(&mut out, "physical_max", s.physical_max, 8)?;
    }
    for s in sigs {
        put_field(&mut out, "digital_min", &s.digital_min.to_string(), 8)?;
    }
    for s in sigs {
        put_field(&mut out, "digital_max", &s.digital_max.to_string(), 8)?;
    }
    for s in sigs {
        put_field(&mut out, "prefiltering", &s.prefiltering, 80)?;
    }
    for s in sigs {
        put_field(&mut out, "samples_per_record", &s.samples_per_record.to_string(), 8)?;
    }
    for s in sigs {
        put_field(&mut out, "signal_reserved", &s.reserved, 32)?;
    }
    Ok(out)
}

/// Write an EDF+C file holding only an annotation signal (the layout used
/// for separately shipped sleep scorings).
pub fn write_annotation_edf(annotations: &[Annotation], duration_s: f64) -> Result<Vec<u8>, EdfError> {
    let mut tal = Vec::new();
    tal.extend_from_slice(b"+0\x14\x14\x00");
    for a in annotations {
        let onset = format_tal_time(a.onset_s);
        tal.extend_from_slice(onset.as_bytes());
        if let Some(d) = a.duration_s {
            tal.push(0x15);
            tal.extend_from_slice(format!("{d}").as_bytes());
        }
        tal.push(0x14);
        tal.extend_from_slice(a.text.as_bytes());
        tal.extend_from_slice(b"\x14\x00");
    }
    if tal.len() % 2 == 1 {
        tal.push(0);
    }
    let record_duration_s = if duration_s > 0.0 { duration_s } else { 1.0 };
    let header = EdfHeader {
        version: "0".into(),
        patient_id: "X X X X".into(),
        recording_id: "Startdate X X X X".into(),
        start_date: "01.01.18".into(),
        start_time: "00.00.00".into(),
        reserved: "EDF+C".into(),
        n_records: 1,
        record_duration_s,
        signals: vec![SignalHeader {
            label: ANNOTATION_LABEL.into(),
            transducer: String::new(),
            physical_dimension: String::new(),
            physical_min: -32768.0,
            physical_max: 32767.0,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: tal.len() / 2,
            reserved: String::new(),
        }],
    };
    let mut out = encode_header(&header)?;
    out.extend_from_slice(&tal);
    Ok(out)
}

fn format_tal_time(t: f64) -> String {
    if t < 0.0 {
        format!("{t}")
    } else {
        format!("+{t}")
    }
}
