//! Brain-heart coupling analysis for overnight polysomnography.
//!
//! The crate turns EDF recordings and hypnograms into per-epoch features
//! (relative EEG band powers for C3/C4, HF heart-rate-variability power from
//! the ECG), then fits a linear mixed-effects model with nested random
//! intercepts and runs per-stage hierarchical clustering with Tukey HSD
//! post-hoc comparisons.
//!
//! Module map:
//!
//! * [`ingest`]: EDF/EDF+ parsing, hypnograms, dataset manifests.
//! * [`dsp`]: median filtering, normalization, Butterworth band-pass,
//!   interpolation, median Welch PSD, MODWPT.
//! * [`ecg`]: Pan-Tompkins beat detection and per-epoch HF power.
//! * [`eeg`]: per-epoch relative band powers.
//! * [`features`]: Yeo-Johnson transform and the long-format feature table.
//! * [`lmm`]: REML fitting of the nested random-intercept model.
//! * [`dist`]: Student t and studentized range distributions.
//! * [`cluster`]: linkage, PCA, Tukey HSD, subject distributions.
//! * [`synth`]: deterministic synthetic recordings with known ground truth.

pub mod cluster;
pub mod dist;
pub mod dsp;
pub mod ecg;
pub mod eeg;
pub mod error;
pub mod features;
pub mod ingest;
pub mod lmm;
pub mod synth;

pub use error::{Error, Result};
