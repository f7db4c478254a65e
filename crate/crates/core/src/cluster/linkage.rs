use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Complete,
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `i` has id `n + i`. `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub n_leaves: usize,
    pub method: Linkage,
    pub merges: Vec<Merge>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Lance-Williams update of the distance from cluster `k` to the union of
/// `i` and `j`.
pub fn lance_williams(method: Linkage, d_ki: f64, d_kj: f64, d_ij: f64, n_i: usize, n_j: usize, n_k: usize) -> f64 {
    let (ni, nj, nk) = (n_i as f64, n_j as f64, n_k as f64);
    match method {
        Linkage::Ward => {
            let s = ((ni + nk) * d_ki * d_ki + (nj + nk) * d_kj * d_kj - nk * d_ij * d_ij) / (ni + nj + nk);
            s.max(0.0).sqrt()
        }
        Linkage::Average => (ni * d_ki + nj * d_kj) / (ni + nj),
        Linkage::Complete => d_ki.max(d_kj),
    }
}

/// Ordering of candidate merges: distance, then the smaller id, then the
/// larger id.
fn key(d: f64, x: usize, y: usize) -> (f64, usize, usize) {
    (d, x.min(y), x.max(y))
}

fn less(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).is_lt()
}

/// Agglomerative clustering of the rows of `points` (Euclidean metric).
///
/// Each step merges the pair with the smallest linkage distance, ties going
/// to the smallest `(id_a, id_b)`. Nearest neighbours are cached per active
/// cluster and only rows whose neighbour was consumed are rescanned.
pub fn hierarchical_cluster(points: &[Vec<f64>], method: Linkage) -> Result<LinkageTree, ClusterError> {
    let n = points.len();
    if n < 2 {
        return Err(ClusterError::TooFewRows(n));
    }
    let width = points[0].len();
    if points.iter().any(|p| p.len() != width) {
        return Err(ClusterError::Ragged);
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let mut dist: Vec<f64> = vec![0.0; n * n];
    dist.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, d) in row.iter_mut().enumerate() {
            *d = euclidean(&points[i], &points[j]);
        }
    });

    // Slot s holds cluster `id[s]`; merged clusters reuse the smaller slot.
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn = vec![0usize; n];
    let nearest = |s: usize, dist: &[f64], active: &[bool], id: &[usize]| -> usize {
        let mut best = usize::MAX;
        let mut best_key = (f64::INFINITY, usize::MAX, usize::MAX);
        for t in 0..n {
            if t == s || !active[t] {
                continue;
            }
            let k = key(dist[s * n + t], id[s], id[t]);
            if best == usize::MAX || less(k, best_key) {
                best = t;
                best_key = k;
            }
        }
        best
    };
    for s in 0..n {
        nn[s] = nearest(s, &dist, &active, &id);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut s_best = usize::MAX;
        let mut best_key = (f64::INFINITY, usize::MAX, usize::MAX);
        for s in 0..n {
            if !active[s] {
                continue;
            }
            let t = nn[s];
            let k = key(dist[s * n + t], id[s], id[t]);
            if s_best == usize::MAX || less(k, best_key) {
                s_best = s;
                best_key = k;
            }
        }
        let (i, j) = {
            let t = nn[s_best];
            (s_best.min(t), s_best.max(t))
        };
        let d_ij = dist[i * n + j];
        let (ni, nj) = (size[i], size[j]);
        merges.push(Merge {
            a: id[i].min(id[j]),
            b: id[i].max(id[j]),
            height: d_ij,
            size: ni + nj,
        });
        active[j] = false;
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            let d = lance_williams(method, dist[k * n + i], dist[k * n + j], d_ij, ni, nj, size[k]);
            dist[k * n + i] = d;
            dist[i * n + k] = d;
        }
        size[i] = ni + nj;
        id[i] = n + step;
        if step + 1 == n - 1 {
            break;
        }
        nn[i] = nearest(i, &dist, &active, &id);
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            if nn[k] == i || nn[k] == j {
                nn[k] = nearest(k, &dist, &active, &id);
            } else {
                let cur = key(dist[k * n + nn[k]], id[k], id[nn[k]]);
                if less(key(dist[k * n + i], id[k], id[i]), cur) {
                    nn[k] = i;
                }
            }
        }
    }
    Ok(LinkageTree {
        n_leaves: n,
        method,
        merges,
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl LinkageTree {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Labels after applying the first `n_merges` merges, numbered by first
    /// appearance in row order.
    fn labels_after(&self, n_merges: usize) -> Vec<usize> {
        let n = self.n_leaves;
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        for (step, m) in self.merges.iter().take(n_merges).enumerate() {
            let new = n + step;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = new;
            parent[rb] = new;
        }
        let mut label_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|i| {
                let r = find(&mut parent, i);
                let next = label_of_root.len();
                *label_of_root.entry(r).or_insert(next)
            })
            .collect()
    }

    /// Flat clustering into `k` groups by leaving the `k - 1` last
    /// (tallest) merges unapplied.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>, ClusterError> {
        let n = self.n_leaves;
        if k == 0 || k > n {
            return Err(ClusterError::InvalidK { k, n });
        }
        Ok(self.labels_after(n - k))
    }

    /// Flat clustering that applies every merge with height `<= height`.
    pub fn cut_height(&self, height: f64) -> Vec<usize> {
        let applied = self.merges.iter().take_while(|m| m.height <= height).count();
        self.labels_after(applied)
    }

    /// `k` in `[2, k_max]` with the largest relative gap
    /// `(h_above - h_below) / h_above` between the tallest applied merge and
    /// the shortest unapplied one. Ties go to the smaller `k`.
    pub fn suggest_k(&self, k_max: usize) -> Option<usize> {
        let n = self.n_leaves;
        let h = self.heights();
        let mut best: Option<(usize, f64)> = None;
        for k in 2..=k_max.min(n - 1) {
            let above = h[n - k];
            let below = if n - k >= 1 { h[n - k - 1] } else { 0.0 };
            let gap = if above > 0.0 { (above - below) / above } else { 0.0 };
            if best.map_or(true, |(_, g)| gap > g) {
                best = Some((k, gap));
            }
        }
        best.map(|(k, _)| k)
    }
}
