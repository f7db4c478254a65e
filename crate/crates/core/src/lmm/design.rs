use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::eeg::{Band, Electrode};
use crate::features::FeatureTable;
use crate::ingest::SleepStage;

/// Which EEG covariates enter the fixed effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateSet {
    /// Five band powers of one electrode.
    Electrode(Electrode),
    /// Band powers of both electrodes in a single model.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub electrode: Electrode,
    pub band: Band,
}

impl Covariate {
    pub fn name(&self) -> String {
        format!("{}_{}", self.electrode.prefix(), self.band.name())
    }
}

/// Fixed part `1 + EEG + stage + EEG:stage` with indicator coding against
/// `reference`, plus random intercepts for subject and subject:stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub covariates: CovariateSet,
    pub reference: SleepStage,
}

impl ModelSpec {
    pub fn electrode(electrode: Electrode) -> Self {
        ModelSpec {
            covariates: CovariateSet::Electrode(electrode),
            reference: SleepStage::Wake,
        }
    }

    pub fn covariate_list(&self) -> Vec<Covariate> {
        let electrodes: Vec<Electrode> = match self.covariates {
            CovariateSet::Electrode(e) => vec![e],
            CovariateSet::Pooled => Electrode::ALL.to_vec(),
        };
        electrodes
            .into_iter()
            .flat_map(|electrode| Band::ALL.map(|band| Covariate { electrode, band }))
            .collect()
    }

    /// Non-reference scored stages in code order.
    pub fn contrast_stages(&self) -> Vec<SleepStage> {
        SleepStage::SCORED
            .into_iter()
            .filter(|&s| s != self.reference)
            .collect()
    }
}

/// What a fixed-effect column encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Main(Covariate),
    Stage(SleepStage),
    Interaction(Covariate, SleepStage),
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Intercept => "(Intercept)".into(),
            Term::Main(c) => c.name(),
            Term::Stage(s) => format!("stage[{}]", s.label()),
            Term::Interaction(c, s) => format!("{}:stage[{}]", c.name(), s.label()),
        }
    }
}

/// Response, fixed-effect design and nested grouping for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDesign {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// Subject index of each row.
    pub subject: Vec<usize>,
    pub subject_names: Vec<String>,
    /// Cell (subject:stage) index of each row; `None` fits a single random intercept.
    pub cell: Option<Vec<usize>>,
    pub cell_names: Vec<String>,
    /// Subject owning each cell.
    pub cell_subject: Vec<usize>,
}

impl MixedDesign {
    /// Generic constructor. Cells must be nested in subjects.
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        column_names: Vec<String>,
        subject: Vec<usize>,
        cell: Option<Vec<usize>>,
    ) -> Result<Self, StatsError> {
        let n = y.len();
        if x.nrows() != n || subject.len() != n || cell.as_ref().is_some_and(|c| c.len() != n) {
            return Err(StatsError::Shape(format!(
                "response has {n} rows, design {}x{}, groupings {} / {:?}",
                x.nrows(),
                x.ncols(),
                subject.len(),
                cell.as_ref().map(|c| c.len())
            )));
        }
        if column_names.len() != x.ncols() {
            return Err(StatsError::Shape("column name count differs from design width".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let n_subjects = subject.iter().max().map_or(0, |m| m + 1);
        let subject_names = (0..n_subjects).map(|i| i.to_string()).collect();
        let (cell_subject, cell_names) = match &cell {
            Some(c) => {
                let n_cells = c.iter().max().map_or(0, |m| m + 1);
                let mut owner = vec![usize::MAX; n_cells];
                for (&ci, &si) in c.iter().zip(&subject) {
                    if owner[ci] == usize::MAX {
                        owner[ci] = si;
                    } else if owner[ci] != si {
                        return Err(StatsError::NotNested(ci));
                    }
                }
                if owner.contains(&usize::MAX) {
                    return Err(StatsError::Shape("cell indices are not contiguous".into()));
                }
                (owner, (0..n_cells).map(|i| i.to_string()).collect())
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(MixedDesign {
            y,
            x,
            column_names,
            subject,
            subject_names,
            cell,
            cell_names,
            cell_subject,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_names.len()
    }

    /// Same design with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> MixedDesign {
        let x = DMatrix::from_fn(order.len(), self.x.ncols(), |i, j| self.x[(order[i], j)]);
        MixedDesign {
            y: order.iter().map(|&i| self.y[i]).collect(),
            x,
            column_names: self.column_names.clone(),
            subject: order.iter().map(|&i| self.subject[i]).collect(),
            subject_names: self.subject_names.clone(),
            cell: self.cell.as_ref().map(|c| order.iter().map(|&i| c[i]).collect()),
            cell_names: self.cell_names.clone(),
            cell_subject: self.cell_subject.clone(),
        }
    }
}

/// Model matrix plus the term each column encodes.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub spec: ModelSpec,
    pub terms: Vec<Term>,
    pub design: MixedDesign,
}

impl ModelDesign {
    pub fn column_of(&self, term: Term) -> Option<usize> {
        self.terms.iter().position(|&t| t == term)
    }
}

/// Build the fixed-effect matrix and groupings from the feature table.
/// Columns that are identically zero (stages absent from the data) are
/// dropped; any remaining linear dependence is an error naming the columns.
pub fn build_design(table: &FeatureTable, spec: &ModelSpec) -> Result<ModelDesign, StatsError> {
    let rows = &table.rows;
    if rows.is_empty() {
        return Err(StatsError::Empty);
    }
    let covs = spec.covariate_list();
    let stages = spec.contrast_stages();
    let mut terms = vec![Term::Intercept];
    terms.extend(covs.iter().map(|&c| Term::Main(c)));
    terms.extend(stages.iter().map(|&s| Term::Stage(s)));
    for &s in &stages {
        terms.extend(covs.iter().map(|&c| Term::Interaction(c, s)));
    }
    let value = |term: Term, r: &crate::features::FeatureRow| -> f64 {
        match term {
            Term::Intercept => 1.0,
            Term::Main(c) => r.band(c.electrode, c.band),
            Term::Stage(s) => f64::from(u8::from(r.stage == s)),
            Term::Interaction(c, s) => {
                if r.stage == s {
                    r.band(c.electrode, c.band)
                } else {
                    0.0
                }
            }
        }
    };
    let keep: Vec<Term> = terms
        .into_iter()
        .filter(|&t| rows.iter().any(|r| value(t, r) != 0.0))
        .collect();
    let x = DMatrix::from_fn(rows.len(), keep.len(), |i, j| value(keep[j], &rows[i]));
    let names: Vec<String> = keep.iter().map(Term::name).collect();
    let aliased = aliased_columns(&x, &names);
    if !aliased.is_empty() {
        return Err(StatsError::RankDeficient(aliased));
    }

    let mut subject_index: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        let next = subject_index.len();
        subject_index.entry(r.subject_id.as_str()).or_insert(next);
    }
    let mut cell_index: BTreeMap<(usize, u8), usize> = BTreeMap::new();
    let mut subject = Vec::with_capacity(rows.len());
    let mut cell = Vec::with_capacity(rows.len());
    for r in rows {
        let s = subject_index[r.subject_id.as_str()];
        let key = (s, r.stage.code().unwrap_or(u8::MAX));
        let next = cell_index.len();
        let c = *cell_index.entry(key).or_insert(next);
        subject.push(s);
        cell.push(c);
    }
    let y = rows.iter().map(|r| r.hf_yj).collect();
    let mut design = MixedDesign::new(y, x, names, subject, Some(cell))?;
    let mut subject_names = vec![String::new(); subject_index.len()];
    for (name, &i) in &subject_index {
        subject_names[i] = name.to_string();
    }
    let mut cell_names = vec![String::new(); cell_index.len()];
    for (&(s, code), &i) in &cell_index {
        let stage = SleepStage::from_code(code as i64).map_or("?", |st| st.label());
        cell_names[i] = format!("{}:{}", subject_names[s], stage);
    }
    design.subject_names = subject_names;
    design.cell_names = cell_names;
    Ok(ModelDesign {
        spec: spec.clone(),
        terms: keep,
        design,
    })
}

/// Columns that are (numerically) linear combinations of earlier columns,
/// found by modified Gram-Schmidt in column order.
pub fn aliased_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..x.ncols() {
        let mut v: Vec<f64> = x.column(j).iter().copied().collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            aliased.push(names[j].clone());
            continue;
        }
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= d * b;
            }
        }
        // Second pass for numerical orthogonality.
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= d * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            aliased.push(names[j].clone());
        } else {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    aliased
}
