//! Per-stage subtype discovery: hierarchical clustering of standardized
//! epoch features, PCA projection, cluster feature means, Tukey HSD and
//! per-subject cluster proportions.

mod linkage;
mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistError;
use crate::eeg::{Band, Electrode};
use crate::features::FeatureTable;
use crate::ingest::SleepStage;
use crate::Result;

pub use linkage::{euclidean, hierarchical_cluster, lance_williams, Linkage, LinkageTree, Merge};
pub use stats::{
    adjusted_rand_index, cluster_means, pca_project, standardize, subject_distribution, top_features, tukey_hsd,
    Direction, Pca, Standardized, TopFeature, TukeyRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("need at least 2 rows to cluster, got {0}")]
    TooFewRows(usize),
    #[error("rows have different lengths")]
    Ragged,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("cannot cut {n} points into {k} clusters")]
    InvalidK { k: usize, n: usize },
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("requested {dims} components but the data have rank {rank}")]
    RankTooLow { dims: usize, rank: usize },
    #[error("no feature column has positive variance")]
    NoVariance,
    #[error("{0} clusters with at least 2 members; need 2")]
    TooFewGroups(usize),
    #[error("label and data lengths differ ({labels} vs {rows})")]
    Length { labels: usize, rows: usize },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// One clustering feature: an EEG relative power or the absolute HF power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feature {
    Eeg(Electrode, Band),
    Hf,
}

impl Feature {
    /// Ten EEG relative powers (C3 then C4, band order) and HF.
    pub const ALL: [Feature; 11] = [
        Feature::Eeg(Electrode::C3, Band::Delta),
        Feature::Eeg(Electrode::C3, Band::Theta),
        Feature::Eeg(Electrode::C3, Band::Alpha),
        Feature::Eeg(Electrode::C3, Band::Beta),
        Feature::Eeg(Electrode::C3, Band::Gamma),
        Feature::Eeg(Electrode::C4, Band::Delta),
        Feature::Eeg(Electrode::C4, Band::Theta),
        Feature::Eeg(Electrode::C4, Band::Alpha),
        Feature::Eeg(Electrode::C4, Band::Beta),
        Feature::Eeg(Electrode::C4, Band::Gamma),
        Feature::Hf,
    ];

    /// Column-style name, e.g. `c3_delta`, `hf_abs`.
    pub fn name(self) -> String {
        match self {
            Feature::Eeg(e, b) => format!("{}_{}", e.prefix(), b.name()),
            Feature::Hf => "hf_abs".into(),
        }
    }

    /// Display name, e.g. `C3 Delta`, `HF`.
    pub fn title(self) -> String {
        match self {
            Feature::Eeg(e, b) => format!("{} {}", e.name(), b.title()),
            Feature::Hf => "HF".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub linkage: Linkage,
    /// Number of clusters; `None` takes the dendrogram-gap suggestion.
    pub k: Option<usize>,
    /// Upper bound for the gap suggestion.
    pub k_max: usize,
    /// Evenly spaced subsample of at most this many epochs per subject.
    pub max_epochs_per_subject: Option<usize>,
    pub alpha: f64,
    pub top_features: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            linkage: Linkage::Ward,
            k: None,
            k_max: 8,
            max_epochs_per_subject: None,
            alpha: 0.05,
            top_features: 5,
        }
    }
}

/// Epoch rows of one stage with their feature vectors in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInput {
    pub stage: SleepStage,
    pub subjects: Vec<String>,
    pub epochs: Vec<usize>,
    pub features: Vec<Feature>,
    pub matrix: Vec<Vec<f64>>,
}

/// Rows of `table` in `stage`, optionally thinned to an evenly spaced
/// subsample per subject.
pub fn cluster_input(table: &FeatureTable, stage: SleepStage, max_per_subject: Option<usize>) -> ClusterInput {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        if r.stage == stage {
            by_subject.entry(r.subject_id.as_str()).or_default().push(i);
        }
    }
    let mut input = ClusterInput {
        stage,
        subjects: Vec::new(),
        epochs: Vec::new(),
        features: Feature::ALL.to_vec(),
        matrix: Vec::new(),
    };
    for (subject, idx) in by_subject {
        let keep: Vec<usize> = match max_per_subject {
            Some(m) if idx.len() > m && m > 0 => (0..m).map(|j| idx[j * idx.len() / m]).collect(),
            _ => idx,
        };
        for i in keep {
            let r = &table.rows[i];
            input.subjects.push(subject.to_string());
            input.epochs.push(r.epoch_index);
            input.matrix.push(
                Feature::ALL
                    .iter()
                    .map(|f| match *f {
                        Feature::Eeg(e, b) => r.band(e, b),
                        Feature::Hf => r.hf_abs,
                    })
                    .collect(),
            );
        }
    }
    input
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub stage: SleepStage,
    pub k: usize,
    pub suggested_k: Option<usize>,
    pub subjects: Vec<String>,
    pub epochs: Vec<usize>,
    pub labels: Vec<usize>,
    pub features: Vec<Feature>,
    /// Feature columns dropped for zero variance.
    pub dropped: Vec<Feature>,
    pub tree: LinkageTree,
    /// `means[c][f]` in original units.
    pub means: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub pca: Pca,
    pub tukey: Vec<TukeyRow>,
    pub top: Vec<Vec<TopFeature>>,
    /// `(subject, proportions per cluster)`.
    pub distribution: Vec<(String, Vec<f64>)>,
}

/// Cluster one stage end to end.
pub fn analyze_stage(input: &ClusterInput, config: &ClusterConfig) -> std::result::Result<ClusterResult, ClusterError> {
    let z = standardize(&input.matrix)?;
    let dropped: Vec<Feature> = z.dropped.iter().map(|&j| input.features[j]).collect();
    for f in &dropped {
        warn!("{:?}: dropping {} (zero variance)", input.stage, f.name());
    }
    let tree = hierarchical_cluster(&z.rows, config.linkage)?;
    let suggested_k = tree.suggest_k(config.k_max);
    let k = config.k.or(suggested_k).unwrap_or(1);
    let labels = tree.cut(k)?;
    let (means, sizes) = cluster_means(&labels, k, &input.matrix)?;
    let dims = 2.min(z.rows[0].len());
    let pca = pca_project(&z.rows, dims)?;
    let mut tukey = Vec::new();
    let mut pvals = Vec::new();
    let mut kept_features = Vec::new();
    for (j, &f) in input.features.iter().enumerate() {
        if z.dropped.contains(&j) {
            continue;
        }
        let column: Vec<f64> = input.matrix.iter().map(|r| r[j]).collect();
        match tukey_hsd(&labels, &column, f.name()) {
            Ok(rows) => {
                pvals.push(rows.clone());
                tukey.extend(rows);
                kept_features.push((j, f));
            }
            Err(ClusterError::TooFewGroups(g)) => {
                warn!("{:?}: Tukey HSD skipped ({g} usable clusters)", input.stage);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let top = top_features(&labels, k, &input.matrix, &kept_features, &pvals, config.alpha, config.top_features);
    let distribution = subject_distribution(&labels, &input.subjects, k);
    Ok(ClusterResult {
        stage: input.stage,
        k,
        suggested_k,
        subjects: input.subjects.clone(),
        epochs: input.epochs.clone(),
        labels,
        features: input.features.clone(),
        dropped,
        tree,
        means,
        sizes,
        pca,
        tukey,
        top,
        distribution,
    })
}

impl ClusterResult {
    /// `subject,epoch,stage,cluster`.
    pub fn write_labels_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject", "epoch", "stage", "cluster"])?;
        for i in 0..self.labels.len() {
            w.write_record([
                self.subjects[i].clone(),
                self.epochs[i].to_string(),
                self.stage.label().to_string(),
                self.labels[i].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `electrode,band,cluster_0,...` in original units; HF has an empty
    /// electrode and band `HF`.
    pub fn write_means_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["electrode".to_string(), "band".to_string()];
        header.extend((0..self.k).map(|c| format!("cluster_{c}")));
        w.write_record(&header)?;
        for (j, f) in self.features.iter().enumerate() {
            let (e, b) = match f {
                Feature::Eeg(e, b) => (e.name().to_string(), b.title().to_string()),
                Feature::Hf => (String::new(), "HF".to_string()),
            };
            let mut rec = vec![e, b];
            rec.extend(self.means.iter().map(|m| format!("{}", m[j])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `feature,cluster_i,cluster_j,diff,se,q,p`.
    pub fn write_tukey_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "cluster_i", "cluster_j", "diff", "se", "q", "p"])?;
        for r in &self.tukey {
            w.write_record([
                r.feature.clone(),
                r.cluster_i.to_string(),
                r.cluster_j.to_string(),
                r.diff.to_string(),
                r.se.to_string(),
                r.q.to_string(),
                r.p.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `epoch,pc1,pc2,cluster`; `epoch` is the row's position in the labels
    /// file.
    pub fn write_pca_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "pc1", "pc2", "cluster"])?;
        for (i, c) in self.pca.coords.iter().enumerate() {
            w.write_record([
                i.to_string(),
                c[0].to_string(),
                c.get(1).copied().unwrap_or(0.0).to_string(),
                self.labels[i].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `subject,cluster,proportion`.
    pub fn write_distribution_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject", "cluster", "proportion"])?;
        for (s, props) in &self.distribution {
            for (c, p) in props.iter().enumerate() {
                w.write_record([s.clone(), c.to_string(), p.to_string()])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Ranked discriminative features per cluster, e.g.
    /// `0: ↓ HF, ↑ C4 Theta`.
    pub fn top_features_text(&self) -> String {
        let mut out = String::new();
        for (c, feats) in self.top.iter().enumerate() {
            let items: Vec<String> = feats
                .iter()
                .map(|t| format!("{} {}", t.direction.arrow(), t.feature.title()))
                .collect();
            out.push_str(&format!("{c}\t{}\n", items.join(", ")));
        }
        out
    }
}
