use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    ButterworthBandpass,
}

/// Band-pass specification. `order` is the order of the analog low-pass
/// prototype, so the band-pass has `2 * order` poles and `order` second-order
/// sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::ButterworthBandpass,
            order,
            low_hz,
            high_hz,
            sample_rate_hz,
        }
    }

    fn validate(&self) -> Result<(), DspError> {
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(DspError::InvalidBand {
                low: self.low_hz,
                high: self.high_hz,
                fs: self.sample_rate_hz,
            });
        }
        if self.order == 0 {
            return Err(DspError::InvalidParameter("filter order must be positive".into()));
        }
        Ok(())
    }
}

/// Second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    /// Causal filtering from zero initial conditions (transposed direct form II).
    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let mut y = signal.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let x = *v;
                let out = s.b[0] * x + z1;
                z1 = s.b[1] * x - s.a[0] * out + z2;
                z2 = s.b[2] * x - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward filtering with odd-extension padding at both ends.
    /// Each pass starts from the steady state of its first input sample.
    pub fn apply_zero_phase(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n < 2 {
            return self.apply(signal);
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));
        let mut y = self.apply_steady(&ext);
        y.reverse();
        let mut y = self.apply_steady(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }

    /// Causal filtering as if the first sample had been applied forever.
    fn apply_steady(&self, signal: &[f64]) -> Vec<f64> {
        let c = signal[0];
        let dc = self.frequency_response(0.0, 1.0).re;
        let shifted: Vec<f64> = signal.iter().map(|v| v - c).collect();
        self.apply(&shifted).into_iter().map(|v| v + c * dc).collect()
    }

    pub fn frequency_response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / sample_rate_hz);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        self.frequency_response(freq_hz, sample_rate_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// Largest pole magnitude; below 1 means stable.
    pub fn max_pole_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Digital Butterworth band-pass via the analog prototype, low-pass to
/// band-pass transform, and bilinear transform with prewarped band edges.
pub fn design_bandpass(spec: &FilterSpec) -> Result<BiquadCascade, DspError> {
    spec.validate()?;
    let order = spec.order;
    let fs = spec.sample_rate_hz;
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * spec.low_hz / fs).tan();
    let w2 = fs2 * (PI * spec.high_hz / fs).tan();
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    let mut digital = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            digital.push((fs2 + s) / (fs2 - s));
        }
    }

    // Pair conjugates; real poles pair with each other.
    let tol = 1e-12;
    let mut complex: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > tol).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut real: Vec<f64> = digital
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    real.sort_by(f64::total_cmp);

    let mut sections = Vec::with_capacity(order);
    for p in complex {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(p1 + p2), p1 * p2],
        });
    }
    if sections.len() != order {
        return Err(DspError::InvalidParameter(format!(
            "pole pairing produced {} sections for order {order}",
            sections.len()
        )));
    }

    let mut cascade = BiquadCascade { sections };
    let radius = cascade.max_pole_radius();
    if radius >= 1.0 {
        return Err(DspError::Unstable(radius));
    }

    // Unit gain at the digital image of the analog center frequency.
    let center_hz = (w0 / fs2).atan() * fs / PI;
    let gain = cascade.magnitude(center_hz, fs);
    let per_section = gain.powf(-1.0 / order as f64);
    for s in &mut cascade.sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(cascade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hrv_filter() -> BiquadCascade {
        design_bandpass(&FilterSpec::butterworth_bandpass(4, 0.04, 0.4, 4.0)).unwrap()
    }

    /// Analog Butterworth band-pass magnitude at the prewarped frequency:
    /// |H| = 1 / sqrt(1 + ((w^2 - w0^2) / (w * bw))^(2N)).
    fn analytic_magnitude(f: f64, order: usize, lo: f64, hi: f64, fs: f64) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (w1, w2, w) = (warp(lo), warp(hi), warp(f));
        let w0sq = w1 * w2;
        let ratio = (w * w - w0sq) / (w * (w2 - w1));
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn passband_center_and_edges() {
        let h = hrv_filter();
        let center = (0.04f64 * 0.4).sqrt();
        let g = h.magnitude(center, 4.0);
        assert!((0.95..=1.0 + 1e-12).contains(&g), "center gain {g}");
        for edge in [0.04, 0.4] {
            let g = h.magnitude(edge, 4.0);
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.05, "edge {edge}: {g}");
        }
    }

    #[test]
    fn matches_analytic_response() {
        let h = hrv_filter();
        for i in 1..200 {
            let f = i as f64 * 0.01;
            let want = analytic_magnitude(f, 4, 0.04, 0.4, 4.0);
            assert!((h.magnitude(f, 4.0) - want).abs() < 1e-9, "f={f}");
        }
    }

    #[test]
    fn blocks_dc_and_nyquist() {
        let h = hrv_filter();
        assert!(h.magnitude(0.0, 4.0) < 1e-12);
        assert!(h.magnitude(2.0, 4.0) <= 1e-6);
    }

    #[test]
    fn rejects_bad_bands() {
        for (lo, hi) in [(0.0, 0.4), (0.5, 0.4), (0.04, 2.0), (0.04, 2.5)] {
            assert!(matches!(
                design_bandpass(&FilterSpec::butterworth_bandpass(4, lo, hi, 4.0)),
                Err(DspError::InvalidBand { .. })
            ));
        }
    }

    #[test]
    fn odd_orders_and_wide_bands_are_stable() {
        for order in 1..=6 {
            for (lo, hi, fs) in [(0.04, 0.4, 4.0), (5.0, 15.0, 256.0), (0.5, 100.0, 256.0)] {
                let h = design_bandpass(&FilterSpec::butterworth_bandpass(order, lo, hi, fs)).unwrap();
                assert_eq!(h.sections.len(), order);
                assert!(h.max_pole_radius() < 1.0);
                let center = analytic_magnitude((lo * hi).sqrt(), order, lo, hi, fs);
                assert!(center > 0.9);
                let g = h.magnitude(lo, fs);
                assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "order {order}: {g}");
            }
        }
    }

    #[test]
    fn zero_input_zero_output() {
        assert!(hrv_filter().apply(&[0.0; 64]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_dft_matches_transfer_function() {
        let h = hrv_filter();
        let n = 1 << 14;
        let mut imp = vec![0.0; n];
        imp[0] = 1.0;
        let resp = h.apply(&imp);
        for k in [1usize, 50, 130, 400, 1000, 3000, 8000] {
            let f = k as f64 * 4.0 / n as f64;
            let dft: Complex64 = resp
                .iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                .sum();
            assert!((dft.norm() - h.magnitude(f, 4.0)).abs() < 1e-6, "bin {k}");
        }
    }

    #[test]
    fn time_invariance_interior() {
        let h = hrv_filter();
        let x: Vec<f64> = (0..300).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let mut shifted = vec![0.0; 10];
        shifted.extend_from_slice(&x);
        let a = h.apply(&x);
        let b = h.apply(&shifted);
        for i in 0..x.len() {
            assert!((a[i] - b[i + 10]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_phase_preserves_length_and_passband() {
        let h = hrv_filter();
        let x: Vec<f64> = (0..400)
            .map(|i| (2.0 * PI * 0.2 * i as f64 / 4.0).sin())
            .collect();
        let y = h.apply_zero_phase(&x);
        assert_eq!(y.len(), x.len());
        // Interior is in phase with the input.
        let corr: f64 = x[100..300].iter().zip(&y[100..300]).map(|(a, b)| a * b).sum::<f64>();
        assert!(corr > 0.0);
    }

    proptest! {
        #[test]
        fn linearity(
            x in prop::collection::vec(-10.0f64..10.0, 120),
            y in prop::collection::vec(-10.0f64..10.0, 120),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let h = hrv_filter();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = h.apply(&mix);
            let fx = h.apply(&x);
            let fy = h.apply(&y);
            for i in 0..120 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9);
            }
        }
    }
}
