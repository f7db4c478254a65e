use std::f64::consts::PI;

use log::warn;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Mean,
    /// Plain per-bin median across segments.
    Median,
    /// Median divided by [`median_bias`], which makes it an unbiased
    /// estimate of the mean for Gaussian noise.
    MedianUnbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchConfig {
    pub seg_len_s: f64,
    pub overlap_frac: f64,
    pub window: Window,
    pub average: Average,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            seg_len_s: 4.0,
            overlap_frac: 0.5,
            window: Window::Hann,
            average: Average::Median,
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    /// Density in signal units squared per Hz.
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn resolution_hz(&self) -> f64 {
        if self.freqs_hz.len() < 2 {
            0.0
        } else {
            self.freqs_hz[1] - self.freqs_hz[0]
        }
    }

    pub fn total_power(&self) -> f64 {
        match (self.freqs_hz.first(), self.freqs_hz.last()) {
            (Some(&lo), Some(&hi)) if hi > lo => band_power(self, lo, hi),
            _ => 0.0,
        }
    }

    pub fn peak_hz(&self) -> Option<f64> {
        self.power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.freqs_hz[i])
    }
}

/// Ratio of the sample median to the mean of `n` exponential variates,
/// used to debias a median across `n` periodogram segments.
pub fn median_bias(n: usize) -> f64 {
    let half = n.saturating_sub(1) / 2;
    1.0 + (1..=half)
        .map(|k| 1.0 / (2 * k + 1) as f64 - 1.0 / (2 * k) as f64)
        .sum::<f64>()
}

fn periodic_window(kind: Window, n: usize) -> Vec<f64> {
    match kind {
        Window::Hann => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect(),
    }
}

/// Welch PSD with per-segment mean removal, density scaling and mean or
/// median combination across segments.
pub fn welch_psd(signal: &[f64], fs: f64, config: &WelchConfig) -> Result<Spectrum, DspError> {
    if !(fs > 0.0) {
        return Err(DspError::InvalidParameter(format!("sample rate {fs} Hz")));
    }
    if !(0.0..1.0).contains(&config.overlap_frac) {
        return Err(DspError::InvalidParameter(format!(
            "overlap fraction {} outside [0, 1)",
            config.overlap_frac
        )));
    }
    let nperseg = (config.seg_len_s * fs).round();
    if !(nperseg >= 8.0) {
        return Err(DspError::WindowTooShort {
            window_s: config.seg_len_s,
            fs,
            min: 8,
        });
    }
    let nperseg = nperseg as usize;
    if signal.len() < nperseg {
        return Err(DspError::TooShort {
            needed: nperseg,
            got: signal.len(),
        });
    }
    let noverlap = ((config.overlap_frac * nperseg as f64).floor() as usize).min(nperseg - 1);
    let step = nperseg - noverlap;
    let n_seg = (signal.len() - nperseg) / step + 1;

    let window = periodic_window(config.window, nperseg);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let n_freq = nperseg / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    // Column-major: segment s occupies per_seg[s * n_freq .. (s + 1) * n_freq].
    let mut per_seg = vec![0.0; n_seg * n_freq];
    for s in 0..n_seg {
        let seg = &signal[s * step..s * step + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let row = &mut per_seg[s * n_freq..(s + 1) * n_freq];
        for (k, p) in row.iter_mut().enumerate() {
            let mut v = buf[k].norm_sqr() * scale;
            let is_nyquist = nperseg % 2 == 0 && k == nperseg / 2;
            if k != 0 && !is_nyquist {
                v *= 2.0;
            }
            *p = v;
        }
    }

    let mut column = vec![0.0; n_seg];
    let power = (0..n_freq)
        .map(|k| {
            for (s, c) in column.iter_mut().enumerate() {
                *c = per_seg[s * n_freq + k];
            }
            match config.average {
                Average::Mean => column.iter().sum::<f64>() / n_seg as f64,
                Average::Median => median(&mut column),
                Average::MedianUnbiased => median(&mut column) / median_bias(n_seg),
            }
        })
        .collect();
    let freqs_hz = (0..n_freq).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok(Spectrum { freqs_hz, power })
}

/// [`welch_psd`] with median averaging and the given segment parameters.
pub fn welch_median_psd(
    signal: &[f64],
    fs: f64,
    seg_len_s: f64,
    overlap_frac: f64,
    window: Window,
) -> Result<Spectrum, DspError> {
    welch_psd(
        signal,
        fs,
        &WelchConfig {
            seg_len_s,
            overlap_frac,
            window,
            average: Average::Median,
        },
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trapezoidal integral of the density over `[lo_hz, hi_hz]`, clipped to the
/// spectrum's frequency range. Band edges falling between bins are handled
/// by linear interpolation, so adjacent bands add up exactly.
pub fn band_power(spec: &Spectrum, lo_hz: f64, hi_hz: f64) -> f64 {
    let f = &spec.freqs_hz;
    let p = &spec.power;
    if f.len() < 2 || !(hi_hz > lo_hz) {
        return 0.0;
    }
    let lo = lo_hz.max(f[0]);
    let hi = hi_hz.min(f[f.len() - 1]);
    if !(hi > lo) {
        warn!(
            "band [{lo_hz}, {hi_hz}] Hz lies outside the spectrum range [{}, {}] Hz",
            f[0],
            f[f.len() - 1]
        );
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..f.len() - 1 {
        let (a, b) = (lo.max(f[k]), hi.min(f[k + 1]));
        if b > a {
            let slope = (p[k + 1] - p[k]) / (f[k + 1] - f[k]);
            let (pa, pb) = (p[k] + slope * (a - f[k]), p[k] + slope * (b - f[k]));
            total += 0.5 * (pa + pb) * (b - a);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn sine_peak_and_parseval() {
        let x = sine(10.0, 256.0, 256 * 30);
        let s = welch_median_psd(&x, 256.0, 4.0, 0.5, Window::Hann).unwrap();
        assert_eq!(s.peak_hz(), Some(10.0));
        let total = s.total_power();
        assert!((total - 0.5).abs() <= 0.025, "total {total}");
        assert!(s.power.iter().all(|&v| v >= 0.0));
        assert!((s.resolution_hz() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_segment_median_equals_mean() {
        let x: Vec<f64> = (0..512).map(|i| ((i * 31) % 13) as f64).collect();
        let cfg = WelchConfig::default();
        let a = welch_psd(&x, 128.0, &cfg).unwrap();
        let b = welch_psd(&x, 128.0, &WelchConfig { average: Average::Mean, ..cfg }).unwrap();
        let c = welch_psd(&x, 128.0, &WelchConfig { average: Average::MedianUnbiased, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn single_segment_matches_direct_periodogram() {
        let fs = 16.0;
        let x: Vec<f64> = (0..64).map(|i| ((i * 7) % 5) as f64 - 1.0).collect();
        let s = welch_psd(&x, fs, &WelchConfig::default()).unwrap();
        let mean = x.iter().sum::<f64>() / 64.0;
        let w = periodic_window(Window::Hann, 64);
        let wss: f64 = w.iter().map(|v| v * v).sum();
        for k in 0..=32 {
            let c: Complex64 = (0..64)
                .map(|t| (x[t] - mean) * w[t] * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / 64.0))
                .sum();
            let mut want = c.norm_sqr() / (fs * wss);
            if k != 0 && k != 32 {
                want *= 2.0;
            }
            assert!((s.power[k] - want).abs() <= 1e-10 * (1.0 + want), "bin {k}");
        }
    }

    #[test]
    fn white_noise_median_is_biased_by_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..256 * 120).map(|_| StandardNormal.sample(&mut rng)).collect();
        let total = welch_median_psd(&x, 256.0, 4.0, 0.5, Window::Hann)
            .unwrap()
            .total_power();
        assert!((total / std::f64::consts::LN_2 - 1.0).abs() <= 0.05, "total {total}");
    }

    #[test]
    fn white_noise_power_matches_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fs = 256.0;
        let x: Vec<f64> = (0..256 * 120).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cfg = WelchConfig {
            average: Average::MedianUnbiased,
            ..WelchConfig::default()
        };
        let s = welch_psd(&x, fs, &cfg).unwrap();
        let total = s.total_power();
        assert!((total - 1.0).abs() <= 0.15, "total {total}");
        // Flat: every 8 Hz block holds its share within statistical tolerance.
        for b in 0..16 {
            let lo = b as f64 * 8.0;
            let share = band_power(&s, lo, lo + 8.0) / total;
            assert!((share - 8.0 / 128.0).abs() < 0.01, "block {b}: {share}");
        }
    }

    #[test]
    fn median_bias_values() {
        assert_eq!(median_bias(1), 1.0);
        assert_eq!(median_bias(2), 1.0);
        assert!((median_bias(3) - (1.0 + 1.0 / 3.0 - 0.5)).abs() < 1e-15);
        assert!((median_bias(100_001) - std::f64::consts::LN_2).abs() < 1e-5);
    }

    #[test]
    fn rejects_short_signals() {
        assert!(matches!(
            welch_median_psd(&[0.0; 100], 256.0, 4.0, 0.5, Window::Hann),
            Err(DspError::TooShort { .. })
        ));
        assert!(welch_median_psd(&[0.0; 100], 1.0, 4.0, 0.5, Window::Hann).is_err());
        assert!(welch_median_psd(&[0.0; 100], 10.0, 4.0, 1.0, Window::Hann).is_err());
    }

    #[test]
    fn band_power_on_flat_spectrum() {
        let s = Spectrum {
            freqs_hz: (0..=10).map(|k| k as f64).collect(),
            power: vec![2.0; 11],
        };
        assert!((band_power(&s, 0.0, 10.0) - 20.0).abs() < 1e-12);
        assert!((band_power(&s, 2.5, 3.25) - 1.5).abs() < 1e-12);
        assert!((band_power(&s, -5.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((band_power(&s, 9.5, 30.0) - 1.0).abs() < 1e-12);
        assert_eq!(band_power(&s, 11.0, 30.0), 0.0);
    }

    #[test]
    fn narrowband_sine_concentrates_in_its_band() {
        let x = sine(10.0, 256.0, 256 * 30);
        let s = welch_median_psd(&x, 256.0, 4.0, 0.5, Window::Hann).unwrap();
        assert!(band_power(&s, 8.0, 12.0) >= 0.95 * s.total_power());
    }

    proptest! {
        #[test]
        fn adjacent_bands_are_additive(
            power in prop::collection::vec(0.0f64..10.0, 3..60),
            cuts in prop::collection::vec(-2.0f64..70.0, 2..8),
        ) {
            let s = Spectrum {
                freqs_hz: (0..power.len()).map(|k| k as f64 * 0.5).collect(),
                power,
            };
            let mut cuts = cuts;
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let whole = band_power(&s, cuts[0], *cuts.last().unwrap());
            let parts: f64 = cuts.windows(2).map(|w| band_power(&s, w[0], w[1])).sum();
            prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole));
        }
    }
}
