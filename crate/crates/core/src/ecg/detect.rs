//! Pan-Tompkins QRS detection on a preprocessed ECG window.

use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, DspError, FilterSpec};

/// Detector parameters. Durations are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub integration_s: f64,
    pub refractory_s: f64,
    pub t_wave_s: f64,
    pub searchback_factor: f64,
    pub threshold_fraction: f64,
    pub learning_s: f64,
    pub refine_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            band_low_hz: 5.0,
            band_high_hz: 15.0,
            integration_s: 0.150,
            refractory_s: 0.200,
            t_wave_s: 0.360,
            searchback_factor: 1.66,
            threshold_fraction: 0.25,
            learning_s: 2.0,
            refine_s: 0.075,
        }
    }
}

/// R-peak times in seconds, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BeatSeries {
    pub beat_times_s: Vec<f64>,
}

impl BeatSeries {
    pub fn new(mut beat_times_s: Vec<f64>) -> Self {
        beat_times_s.sort_by(f64::total_cmp);
        beat_times_s.dedup();
        BeatSeries { beat_times_s }
    }

    pub fn len(&self) -> usize {
        self.beat_times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times_s.is_empty()
    }

    /// Beats with `start_s <= t < end_s`.
    pub fn within(&self, start_s: f64, end_s: f64) -> BeatSeries {
        BeatSeries {
            beat_times_s: self
                .beat_times_s
                .iter()
                .copied()
                .filter(|&t| t >= start_s && t < end_s)
                .collect(),
        }
    }
}

/// Intermediate signals of the detector, exposed for inspection.
#[derive(Debug, Clone)]
pub struct DetectorTrace {
    pub filtered: Vec<f64>,
    pub integrated: Vec<f64>,
    pub peaks: Vec<usize>,
}

/// Detect R peaks in `window` sampled at `fs`; returned times are relative to
/// the first sample. A constant window yields no beats.
pub fn detect_beats(window: &[f64], fs: f64, config: &DetectorConfig) -> Result<BeatSeries, DspError> {
    Ok(detect_beats_traced(window, fs, config)?.0)
}

pub fn detect_beats_traced(
    window: &[f64],
    fs: f64,
    config: &DetectorConfig,
) -> Result<(BeatSeries, DetectorTrace), DspError> {
    if !(fs >= 100.0) {
        return Err(DspError::InvalidParameter(format!(
            "beat detection needs fs >= 100 Hz, got {fs}"
        )));
    }
    let n = window.len();
    let empty = |filtered, integrated| {
        (
            BeatSeries::default(),
            DetectorTrace {
                filtered,
                integrated,
                peaks: Vec::new(),
            },
        )
    };
    if n < 5 {
        return Ok(empty(window.to_vec(), vec![0.0; n]));
    }

    let band = design_bandpass(&FilterSpec::butterworth_bandpass(
        2,
        config.band_low_hz,
        config.band_high_hz,
        fs,
    ))?;
    let filtered = band.apply_zero_phase(window);

    // Centered five-point derivative, squared.
    let squared: Vec<f64> = (0..n)
        .map(|i| {
            let at = |k: isize| filtered[(i as isize + k).clamp(0, n as isize - 1) as usize];
            let d = (2.0 * at(1) + at(2) - at(-2) - 2.0 * at(-1)) * fs / 8.0;
            d * d
        })
        .collect();

    let width = ((config.integration_s * fs).round() as usize).max(1);
    let integrated = centered_moving_average(&squared, width);
    let peak_level = integrated.iter().cloned().fold(0.0, f64::max);
    if !(peak_level > 0.0) || !peak_level.is_finite() {
        return Ok(empty(filtered, integrated));
    }

    let refractory = ((config.refractory_s * fs).round() as usize).max(1);
    let candidates = candidate_peaks(&integrated, refractory);

    // Learning phase initializes the running estimates.
    let learn = ((config.learning_s * fs) as usize).clamp(1, n);
    let learn_max = integrated[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = integrated[..learn].iter().sum::<f64>() / learn as f64;
    let mut spk = 0.25 * learn_max.max(0.25 * peak_level);
    let mut npk = 0.5 * learn_mean;

    let slope = |i: usize| -> f64 {
        let lo = i.saturating_sub(width);
        let hi = (i + width / 2).min(n - 1);
        (lo..hi)
            .map(|k| (filtered[k + 1] - filtered[k]).abs())
            .fold(0.0, f64::max)
    };

    let t_wave = (config.t_wave_s * fs).round() as usize;
    let mut qrs: Vec<usize> = Vec::new();
    let mut qrs_slopes: Vec<f64> = Vec::new();
    let mut noise_since_last: Vec<usize> = Vec::new();
    let mut rr: Vec<usize> = Vec::new();

    let rr_avg = |rr: &[usize]| -> Option<f64> {
        let recent = &rr[rr.len().saturating_sub(8)..];
        (!recent.is_empty()).then(|| recent.iter().sum::<usize>() as f64 / recent.len() as f64)
    };

    for &p in &candidates {
        // Search back for a missed beat before considering this peak.
        if let (Some(&last), Some(avg)) = (qrs.last(), rr_avg(&rr)) {
            if (p - last) as f64 > config.searchback_factor * avg {
                let threshold2 = 0.5 * (npk + config.threshold_fraction * (spk - npk));
                let best = noise_since_last
                    .iter()
                    .copied()
                    .filter(|&c| c - last >= refractory && p - c >= refractory)
                    .filter(|&c| integrated[c] > threshold2)
                    .max_by(|&a, &b| integrated[a].total_cmp(&integrated[b]));
                if let Some(c) = best {
                    spk = 0.25 * integrated[c] + 0.75 * spk;
                    rr.push(c - last);
                    qrs.push(c);
                    qrs_slopes.push(slope(c));
                    noise_since_last.clear();
                }
            }
        }

        let value = integrated[p];
        let threshold1 = npk + config.threshold_fraction * (spk - npk);
        if value > threshold1 {
            let s = slope(p);
            let is_t_wave = match (qrs.last(), qrs_slopes.last()) {
                (Some(&last), Some(&prev_slope)) => p - last < t_wave && s < 0.5 * prev_slope,
                _ => false,
            };
            if is_t_wave {
                npk = 0.125 * value + 0.875 * npk;
                continue;
            }
            if let Some(&last) = qrs.last() {
                if p - last < refractory {
                    continue;
                }
                rr.push(p - last);
            }
            spk = 0.125 * value + 0.875 * spk;
            qrs.push(p);
            qrs_slopes.push(s);
            noise_since_last.clear();
        } else {
            npk = 0.125 * value + 0.875 * npk;
            noise_since_last.push(p);
        }
    }

    // Refine each detection to the largest input sample nearby.
    let reach = (config.refine_s * fs).round() as usize;
    let mut refined: Vec<usize> = qrs
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(reach);
            let hi = (p + reach).min(n - 1);
            (lo..=hi)
                .max_by(|&a, &b| window[a].total_cmp(&window[b]).then(b.cmp(&a)))
                .unwrap_or(p)
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    let beats = BeatSeries {
        beat_times_s: refined.iter().map(|&i| i as f64 / fs).collect(),
    };
    Ok((
        beats,
        DetectorTrace {
            filtered,
            integrated,
            peaks: qrs,
        },
    ))
}

fn centered_moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let left = (width - 1) / 2;
    let right = width / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / width as f64
        })
        .collect()
}

/// Local maxima, thinned so that no two are closer than `min_gap` samples
/// (the larger one wins, earlier on ties).
fn candidate_peaks(x: &[f64], min_gap: usize) -> Vec<usize> {
    let n = x.len();
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // Walk across a plateau.
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] && x[i] > 0.0 {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
    let mut keep = vec![false; peaks.len()];
    let mut taken: Vec<usize> = Vec::new();
    for idx in order {
        let p = peaks[idx];
        if taken.iter().all(|&q| p.abs_diff(q) >= min_gap) {
            keep[idx] = true;
            taken.push(p);
        }
    }
    peaks
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse_train(fs: f64, secs: f64, period: f64) -> (Vec<f64>, Vec<f64>) {
        let n = (secs * fs) as usize;
        let mut truth = Vec::new();
        let mut t = 0.4;
        while t < secs - 0.2 {
            truth.push(t);
            t += period;
        }
        let x = (0..n)
            .map(|i| {
                let ti = i as f64 / fs;
                truth
                    .iter()
                    .map(|&b| {
                        let r = (-(ti - b).powi(2) / (2.0 * 0.012f64.powi(2))).exp();
                        let tw = 0.3 * (-(ti - b - 0.25).powi(2) / (2.0 * 0.04f64.powi(2))).exp();
                        r + tw
                    })
                    .sum()
            })
            .collect();
        (x, truth)
    }

    #[test]
    fn flat_window_has_no_beats() {
        let b = detect_beats(&vec![0.5; 7680], 256.0, &DetectorConfig::default()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn finds_every_pulse() {
        let (x, truth) = pulse_train(256.0, 30.0, 1.0);
        let b = detect_beats(&x, 256.0, &DetectorConfig::default()).unwrap();
        assert_eq!(b.len(), truth.len());
        for (got, want) in b.beat_times_s.iter().zip(&truth) {
            assert!((got - want).abs() <= 0.01, "{got} vs {want}");
        }
    }

    #[test]
    fn candidate_peaks_respect_gap() {
        let x = [0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5, 0.0];
        assert_eq!(candidate_peaks(&x, 3), vec![3, 7]);
    }

    #[test]
    fn moving_average_of_constant() {
        let m = centered_moving_average(&[2.0; 20], 5);
        assert!(m[2..18].iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn low_rate_is_rejected() {
        assert!(detect_beats(&[0.0; 100], 50.0, &DetectorConfig::default()).is_err());
    }
}
