//! Polysomnography ingestion: EDF files, hypnograms and dataset manifests.

pub mod edf;
pub mod hypnogram;
pub mod manifest;
mod recording;

pub use edf::{parse_edf, write_edf, EdfFile, EdfHeader, SignalHeader};
pub use hypnogram::{parse_hypnogram, Hypnogram, SleepStage};
pub use manifest::{load_dataset, load_recording, read_manifest, DatasetLoad, ManifestEntry};
pub use recording::{ChannelRole, ChannelSignal, Recording};
