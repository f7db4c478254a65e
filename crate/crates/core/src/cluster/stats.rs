use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ClusterError, Feature};
use crate::dist::ptukey_upper;

/// Z-scored rows (population sd) with zero-variance columns removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub rows: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Original indices of the retained columns.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

pub fn standardize(matrix: &[Vec<f64>]) -> Result<Standardized, ClusterError> {
    let n = matrix.len();
    if n < 2 {
        return Err(ClusterError::TooFewRows(n));
    }
    let p = matrix[0].len();
    if matrix.iter().any(|r| r.len() != p) {
        return Err(ClusterError::Ragged);
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        let m = matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = matrix.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        let s = v.sqrt();
        if s > 0.0 && s > 1e-12 * m.abs() {
            kept.push(j);
            mean.push(m);
            sd.push(s);
        } else {
            dropped.push(j);
        }
    }
    if kept.is_empty() {
        return Err(ClusterError::NoVariance);
    }
    let rows = matrix
        .iter()
        .map(|r| kept.iter().enumerate().map(|(c, &j)| (r[j] - mean[c]) / sd[c]).collect())
        .collect();
    Ok(Standardized {
        rows,
        mean,
        sd,
        kept,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Projected coordinates, one row per input row.
    pub coords: Vec<Vec<f64>>,
    /// Variance fraction of each retained component.
    pub explained_ratio: Vec<f64>,
    /// Unit loading vectors, one per component.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Principal components of the column-centered matrix via SVD. Each
/// component is signed so its largest-magnitude loading is positive.
pub fn pca_project(matrix: &[Vec<f64>], dims: usize) -> Result<Pca, ClusterError> {
    let n = matrix.len();
    if n < 2 {
        return Err(ClusterError::TooFewRows(n));
    }
    let p = matrix[0].len();
    let mean: Vec<f64> = (0..p).map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let varying = (0..p)
        .filter(|&j| matrix.iter().any(|r| (r[j] - mean[j]).abs() > 0.0))
        .count();
    let max_dims = varying.min(n - 1);
    if dims == 0 || dims > max_dims {
        return Err(ClusterError::RankTooLow { dims, rank: max_dims });
    }
    let x = DMatrix::from_fn(n, p, |i, j| matrix[i][j] - mean[j]);
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut components = Vec::with_capacity(dims);
    let mut explained_ratio = Vec::with_capacity(dims);
    for &c in order.iter().take(dims) {
        let mut v: Vec<f64> = v_t.row(c).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(1.0, |(_, x)| *x);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        explained_ratio.push(if total > 0.0 { s[c] * s[c] / total } else { 0.0 });
        components.push(v);
    }
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|v| (0..p).map(|j| x[(i, j)] * v[j]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        coords,
        explained_ratio,
        components,
        mean,
    })
}

/// Per-cluster column means and cluster sizes.
pub fn cluster_means(labels: &[usize], k: usize, matrix: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<usize>), ClusterError> {
    if labels.len() != matrix.len() {
        return Err(ClusterError::Length {
            labels: labels.len(),
            rows: matrix.len(),
        });
    }
    let p = matrix.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; p]; k];
    let mut sizes = vec![0usize; k];
    for (&l, row) in labels.iter().zip(matrix) {
        if l >= k {
            return Err(ClusterError::InvalidK { k: l + 1, n: k });
        }
        sizes[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, (s, &m)) in sums.iter_mut().zip(&sizes).enumerate() {
        if m == 0 {
            return Err(ClusterError::EmptyCluster(c));
        }
        s.iter_mut().for_each(|v| *v /= m as f64);
    }
    Ok((sums, sizes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyRow {
    pub feature: String,
    pub cluster_i: usize,
    pub cluster_j: usize,
    /// `mean_i - mean_j`.
    pub diff: f64,
    pub se: f64,
    pub q: f64,
    pub p: f64,
}

/// Tukey-Kramer all-pairs comparison of one feature across clusters.
/// Clusters with fewer than 2 members are left out with a warning.
pub fn tukey_hsd(labels: &[usize], column: &[f64], feature: String) -> Result<Vec<TukeyRow>, ClusterError> {
    if labels.len() != column.len() {
        return Err(ClusterError::Length {
            labels: labels.len(),
            rows: column.len(),
        });
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&l, &v) in labels.iter().zip(column) {
        groups.entry(l).or_default().push(v);
    }
    groups.retain(|c, g| {
        if g.len() < 2 {
            warn!("{feature}: cluster {c} has {} member(s); excluded from Tukey HSD", g.len());
        }
        g.len() >= 2
    });
    let k = groups.len();
    if k < 2 {
        return Err(ClusterError::TooFewGroups(k));
    }
    let n: usize = groups.values().map(Vec::len).sum();
    let df = (n - k) as f64;
    let stats: Vec<(usize, f64, f64)> = groups
        .iter()
        .map(|(&c, g)| (c, g.len() as f64, g.iter().sum::<f64>() / g.len() as f64))
        .collect();
    let sse: f64 = groups
        .values()
        .zip(&stats)
        .map(|(g, &(_, _, m))| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let mse = sse / df;
    let mut rows = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let (ci, ni, mi) = stats[a];
            let (cj, nj, mj) = stats[b];
            let diff = mi - mj;
            let se = (0.5 * mse * (1.0 / ni + 1.0 / nj)).sqrt();
            let q = if se > 0.0 {
                diff.abs() / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let p = if q.is_infinite() { 0.0 } else { ptukey_upper(q, k, df)? };
            rows.push(TukeyRow {
                feature: feature.clone(),
                cluster_i: ci,
                cluster_j: cj,
                diff,
                se,
                q,
                p,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn arrow(self) -> &'static str {
        match self {
            Direction::Up => "↑",
            Direction::Down => "↓",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub feature: Feature,
    pub direction: Direction,
    /// Largest Tukey p over the cluster's pairwise comparisons.
    pub max_p: f64,
    /// `(cluster mean - grand mean) / sd`.
    pub std_diff: f64,
}

/// Per cluster, the features that differ significantly from every other
/// cluster (largest pairwise p below `alpha`), ranked by that p and then
/// by absolute standardized difference from the grand mean.
pub fn top_features(
    labels: &[usize],
    k: usize,
    matrix: &[Vec<f64>],
    features: &[(usize, Feature)],
    tukey: &[Vec<TukeyRow>],
    alpha: f64,
    n_top: usize,
) -> Vec<Vec<TopFeature>> {
    let n = matrix.len() as f64;
    let mut out = vec![Vec::new(); k];
    let Ok((means, _)) = cluster_means(labels, k, matrix) else {
        return out;
    };
    for (c, list) in out.iter_mut().enumerate() {
        for (&(j, feature), rows) in features.iter().zip(tukey) {
            let involved: Vec<f64> = rows
                .iter()
                .filter(|r| r.cluster_i == c || r.cluster_j == c)
                .map(|r| r.p)
                .collect();
            if involved.is_empty() {
                continue;
            }
            let max_p = involved.iter().cloned().fold(0.0, f64::max);
            if !(max_p < alpha) {
                continue;
            }
            let grand = matrix.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (matrix.iter().map(|r| (r[j] - grand).powi(2)).sum::<f64>() / n).sqrt();
            let std_diff = if sd > 0.0 { (means[c][j] - grand) / sd } else { 0.0 };
            list.push(TopFeature {
                feature,
                direction: if std_diff >= 0.0 { Direction::Up } else { Direction::Down },
                max_p,
                std_diff,
            });
        }
        list.sort_by(|a, b| {
            a.max_p
                .total_cmp(&b.max_p)
                .then(b.std_diff.abs().total_cmp(&a.std_diff.abs()))
        });
        list.truncate(n_top);
    }
    out
}

/// Proportion of each subject's rows in each cluster, subjects in sorted
/// order.
pub fn subject_distribution(labels: &[usize], subjects: &[String], k: usize) -> Vec<(String, Vec<f64>)> {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (&l, s) in labels.iter().zip(subjects) {
        let row = counts.entry(s.as_str()).or_insert_with(|| vec![0; k]);
        if l < k {
            row[l] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(s, c)| {
            let total: usize = c.iter().sum();
            let props = c.iter().map(|&x| x as f64 / total.max(1) as f64).collect();
            (s.to_string(), props)
        })
        .collect()
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let pairs = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| pairs(v)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
