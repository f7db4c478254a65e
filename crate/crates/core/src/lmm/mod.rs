//! Linear mixed model with nested random intercepts, fitted by REML.
//!
//! The response is regressed on EEG band powers, sleep stage and their
//! interactions, with random intercepts for subject and subject:stage.

mod design;
mod reml;
mod report;

use thiserror::Error;

use crate::dist::DistError;

pub use design::{aliased_columns, build_design, Covariate, CovariateSet, MixedDesign, ModelDesign, ModelSpec, Term};
pub use reml::{fit_reml, reml_gradient, reml_loglik, ModelFit, RemlOptions, LOG_THETA_BOUNDS};
pub use report::{
    residual_diagnostics, stage_slopes, write_effect_table, write_effects_csv, Diagnostics, EffectReport, EffectRow,
    Histogram, TABLE_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no rows to model")]
    Empty,
    #[error("design matrix is rank deficient; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("{n} observations cannot identify {p} fixed effects")]
    TooFewObservations { n: usize, p: usize },
    #[error("cell {0} spans more than one subject")]
    NotNested(usize),
    #[error("inconsistent dimensions: {0}")]
    Shape(String),
    #[error("non-finite value in response or design")]
    NonFinite,
    #[error("singular normal equations")]
    Singular,
    #[error(transparent)]
    Dist(#[from] DistError),
}
