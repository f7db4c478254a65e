//! Signal-processing primitives shared by the ECG and EEG pipelines.
//!
//! Everything here is a pure function of its inputs.

mod iir;
mod interp;
mod median;
mod modwpt;
mod normalize;
mod welch;

use thiserror::Error;

pub use iir::{design_bandpass, Biquad, BiquadCascade, FilterKind, FilterSpec};
pub use interp::linear_interp;
pub use median::{baseline_remove, median_filter, median_filter_len, BASELINE_WINDOWS_S};
pub use modwpt::{modwpt, Wavelet, WaveletPacketDecomposition};
pub use normalize::moving_minmax_norm;
pub use welch::{band_power, median_bias, welch_median_psd, welch_psd, Average, Spectrum, WelchConfig, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("empty signal")]
    Empty,
    #[error("signal has {got} samples, need at least {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("window of {window_s} s at {fs} Hz spans fewer than {min} samples")]
    WindowTooShort { window_s: f64, fs: f64, min: usize },
    #[error("invalid band [{low}, {high}] Hz for sample rate {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("filter is unstable (pole magnitude {0})")]
    Unstable(f64),
    #[error("need at least 2 interpolation knots, got {0}")]
    TooFewKnots(usize),
    #[error("decomposition level {level} needs at least {needed} samples, got {got}")]
    LevelTooDeep {
        level: usize,
        needed: usize,
        got: usize,
    },
    #[error("{0}")]
    InvalidParameter(String),
}
