use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Db2,
}

impl Wavelet {
    /// Orthonormal scaling filter.
    pub fn scaling_filter(self) -> Vec<f64> {
        match self {
            Wavelet::Db2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
        }
    }

    /// Quadrature mirror of the scaling filter: `g[k] = (-1)^k h[L-1-k]`.
    pub fn wavelet_filter(self) -> Vec<f64> {
        let h = self.scaling_filter();
        let l = h.len();
        (0..l)
            .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
            .collect()
    }

    pub fn len(self) -> usize {
        self.scaling_filter().len()
    }
}

/// Undecimated wavelet packet tree at a single level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletPacketDecomposition {
    pub level: usize,
    /// `2^level` coefficient sequences in frequency order, each as long as the input.
    pub nodes: Vec<Vec<f64>>,
    /// Nominal `[lo, hi)` band of each node in Hz.
    pub node_bands_hz: Vec<(f64, f64)>,
    pub wavelet: Wavelet,
}

impl WaveletPacketDecomposition {
    pub fn node_width_hz(&self) -> f64 {
        self.node_bands_hz[0].1 - self.node_bands_hz[0].0
    }

    pub fn node_energies(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|n| n.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Fraction of each node's nominal band that overlaps `[lo_hz, hi_hz]`.
    pub fn band_weights(&self, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
        node_weights(&self.node_bands_hz, lo_hz, hi_hz)
    }

    /// Overlap-weighted sum of node energies for `[lo_hz, hi_hz]`.
    pub fn weighted_energy(&self, lo_hz: f64, hi_hz: f64) -> f64 {
        self.band_weights(lo_hz, hi_hz)
            .iter()
            .zip(self.node_energies())
            .map(|(w, e)| w * e)
            .sum()
    }
}

pub(crate) fn node_weights(bands: &[(f64, f64)], lo_hz: f64, hi_hz: f64) -> Vec<f64> {
    bands
        .iter()
        .map(|&(a, b)| ((hi_hz.min(b) - lo_hz.max(a)) / (b - a)).clamp(0.0, 1.0))
        .collect()
}

fn circular_filter(x: &[f64], filter: &[f64], stride: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            filter
                .iter()
                .enumerate()
                .map(|(l, &c)| c * x[(t + n * filter.len() * stride - l * stride) % n])
                .sum()
        })
        .collect()
}

/// Maximal-overlap discrete wavelet packet transform to `level`.
///
/// Filters are rescaled by `1/sqrt(2)` and upsampled by `2^(j-1)` at stage
/// `j`; convolution is circular, so node energies sum to the input energy.
/// Natural-order node `n` at stage `j` splits into `2n` (scaling) and
/// `2n + 1` (wavelet); frequency-ordered node `k` is natural node `k ^ (k >> 1)`.
pub fn modwpt(
    signal: &[f64],
    fs: f64,
    level: usize,
    wavelet: Wavelet,
) -> Result<WaveletPacketDecomposition, DspError> {
    if level == 0 {
        return Err(DspError::InvalidParameter("decomposition level must be at least 1".into()));
    }
    if signal.is_empty() {
        return Err(DspError::Empty);
    }
    if !(fs > 0.0) {
        return Err(DspError::InvalidParameter(format!("sample rate {fs} Hz")));
    }
    let needed = ((1usize << level) - 1) * (wavelet.len() - 1) + 1;
    if signal.len() < needed {
        return Err(DspError::LevelTooDeep {
            level,
            needed,
            got: signal.len(),
        });
    }
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let h: Vec<f64> = wavelet.scaling_filter().iter().map(|c| c * inv).collect();
    let g: Vec<f64> = wavelet.wavelet_filter().iter().map(|c| c * inv).collect();

    let mut natural = vec![signal.to_vec()];
    for j in 1..=level {
        let stride = 1 << (j - 1);
        natural = natural
            .iter()
            .flat_map(|node| [circular_filter(node, &h, stride), circular_filter(node, &g, stride)])
            .collect();
    }
    let count = 1usize << level;
    let mut slots: Vec<Option<Vec<f64>>> = natural.into_iter().map(Some).collect();
    let nodes = (0..count)
        .map(|k| slots[k ^ (k >> 1)].take().expect("gray code is a permutation"))
        .collect();
    let width = fs / (2 * count) as f64;
    let node_bands_hz = (0..count)
        .map(|k| (k as f64 * width, (k + 1) as f64 * width))
        .collect();
    Ok(WaveletPacketDecomposition {
        level,
        nodes,
        node_bands_hz,
        wavelet,
    })
}
