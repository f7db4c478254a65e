use std::path::PathBuf;

use thiserror::Error;

use crate::cluster::ClusterError;
use crate::dsp::DspError;
use crate::ingest::edf::EdfError;
use crate::ingest::hypnogram::HypnogramError;
use crate::lmm::StatsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Module errors convert into it with `?`.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Hypnogram(#[from] HypnogramError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("recording {subject}: no channel matching {role}")]
    MissingChannel { subject: String, role: String },
    #[error("invalid recording {subject}: {reason}")]
    InvalidRecording { subject: String, reason: String },
    #[error("no analyzable rows")]
    NoAnalyzableRows,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
