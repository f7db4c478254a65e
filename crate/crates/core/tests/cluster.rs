use bhc_core::cluster::{
    adjusted_rand_index, analyze_stage, cluster_input, cluster_means, euclidean, hierarchical_cluster, pca_project,
    standardize, subject_distribution, tukey_hsd, ClusterConfig, ClusterError, Linkage, Merge,
};
use bhc_core::dist::t_two_sided_p;
use bhc_core::ecg::EcgConfig;
use bhc_core::eeg::{Denominator, EegConfig};
use bhc_core::features::{build_table, extract_subject};
use bhc_core::ingest::{load_dataset, SleepStage};
use bhc_core::synth::{write_dataset, SynthProfile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_points(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..p).map(|_| gauss(&mut rng)).collect()).collect()
}

/// Cluster distance computed from the member points directly.
fn set_distance(points: &[Vec<f64>], a: &[usize], b: &[usize], method: Linkage) -> f64 {
    match method {
        Linkage::Ward => {
            let p = points[0].len();
            let centroid = |s: &[usize]| -> Vec<f64> {
                (0..p).map(|j| s.iter().map(|&i| points[i][j]).sum::<f64>() / s.len() as f64).collect()
            };
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt() * euclidean(&centroid(a), &centroid(b))
        }
        Linkage::Average => {
            let s: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| euclidean(&points[i], &points[j])).sum();
            s / (a.len() * b.len()) as f64
        }
        Linkage::Complete => a
            .iter()
            .flat_map(|&i| b.iter().map(move |&j| (i, j)))
            .map(|(i, j)| euclidean(&points[i], &points[j]))
            .fold(0.0, f64::max),
    }
}

/// O(n^3) agglomeration over explicit member sets.
fn brute_force(points: &[Vec<f64>], method: Linkage) -> Vec<Merge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let d = set_distance(points, &clusters[x].1, &clusters[y].1, method);
                let (ia, ib) = (clusters[x].0.min(clusters[y].0), clusters[x].0.max(clusters[y].0));
                let better = match best {
                    None => true,
                    Some((bd, ba, bb, _, _)) => (d, ia, ib) < (bd, ba, bb),
                };
                if better {
                    best = Some((d, ia, ib, x, y));
                }
            }
        }
        let (d, a, b, x, y) = best.unwrap();
        let mut members = clusters[x].1.clone();
        members.extend(&clusters[y].1);
        merges.push(Merge {
            a,
            b,
            height: d,
            size: members.len(),
        });
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((n + step, members));
    }
    merges
}

#[test]
fn linkage_matches_brute_force() {
    for method in [Linkage::Ward, Linkage::Average, Linkage::Complete] {
        for (seed, n) in [(1, 50), (2, 50), (3, 17), (4, 2)] {
            let pts = random_points(seed, n, 4);
            let tree = hierarchical_cluster(&pts, method).unwrap();
            let oracle = brute_force(&pts, method);
            assert_eq!(tree.merges.len(), n - 1);
            for (m, o) in tree.merges.iter().zip(&oracle) {
                assert_eq!((m.a, m.b, m.size), (o.a, o.b, o.size), "{method:?} seed {seed}");
                assert!((m.height - o.height).abs() <= 1e-9, "{} vs {}", m.height, o.height);
            }
        }
    }
}

#[test]
fn ties_break_on_smallest_ids() {
    // Unit square: four equal nearest-neighbour distances.
    let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    for method in [Linkage::Ward, Linkage::Average, Linkage::Complete] {
        let tree = hierarchical_cluster(&pts, method).unwrap();
        let oracle = brute_force(&pts, method);
        assert_eq!((tree.merges[0].a, tree.merges[0].b), (0, 1));
        for (m, o) in tree.merges.iter().zip(&oracle) {
            assert_eq!((m.a, m.b), (o.a, o.b));
            assert!((m.height - o.height).abs() <= 1e-12);
        }
    }
}

#[test]
fn small_trees() {
    let tree = hierarchical_cluster(&[vec![0.0, 0.0], vec![3.0, 4.0]], Linkage::Ward).unwrap();
    assert_eq!(tree.merges.len(), 1);
    assert!((tree.merges[0].height - 5.0).abs() <= 1e-12);
    let tree = hierarchical_cluster(&[vec![0.0], vec![1.0], vec![10.0]], Linkage::Ward).unwrap();
    assert_eq!((tree.merges[0].a, tree.merges[0].b), (0, 1));
    assert!(matches!(hierarchical_cluster(&[vec![1.0]], Linkage::Ward), Err(ClusterError::TooFewRows(1))));
}

#[test]
fn cut_extremes_and_invalid_k() {
    let pts = random_points(9, 12, 3);
    let tree = hierarchical_cluster(&pts, Linkage::Ward).unwrap();
    assert_eq!(tree.cut(12).unwrap(), (0..12).collect::<Vec<_>>());
    assert_eq!(tree.cut(1).unwrap(), vec![0; 12]);
    assert!(tree.cut(0).is_err());
    assert!(tree.cut(13).is_err());
}

#[test]
fn two_blobs_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for i in 0..200 {
        let c = (i % 2) as f64 * 10.0;
        pts.push(vec![c + 0.1 * gauss(&mut rng), c + 0.1 * gauss(&mut rng)]);
        truth.push(i % 2);
    }
    let tree = hierarchical_cluster(&pts, Linkage::Ward).unwrap();
    let labels = tree.cut(2).unwrap();
    assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
    assert_eq!(tree.suggest_k(6), Some(2));

    let (means, sizes) = cluster_means(&labels, 2, &pts).unwrap();
    assert_eq!(sizes, vec![100, 100]);
    // Cluster 0 holds row 0, which came from the blob at the origin.
    let tol = 4.0 * 0.1 / 10.0;
    for (m, c) in means.iter().zip([0.0, 10.0]) {
        assert!(m.iter().all(|v| (v - c).abs() <= tol), "{m:?}");
    }
}

#[test]
fn clustering_is_invariant_to_row_order() {
    let pts = random_points(5, 40, 3);
    let tree = hierarchical_cluster(&pts, Linkage::Ward).unwrap();
    let mut order: Vec<usize> = (0..40).collect();
    order.reverse();
    order.swap(3, 17);
    let permuted: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
    let tree_p = hierarchical_cluster(&permuted, Linkage::Ward).unwrap();
    for k in 2..6 {
        let a = tree.cut(k).unwrap();
        let b = tree_p.cut(k).unwrap();
        let a_perm: Vec<usize> = order.iter().map(|&i| a[i]).collect();
        assert_eq!(adjusted_rand_index(&a_perm, &b), 1.0, "k={k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn heights_monotone_and_cuts_nested(seed in 0u64..10_000, n in 2usize..40, method in 0usize..3) {
        let method = [Linkage::Ward, Linkage::Average, Linkage::Complete][method];
        let pts = random_points(seed, n, 3);
        let tree = hierarchical_cluster(&pts, method).unwrap();
        for w in tree.merges.windows(2) {
            prop_assert!(w[1].height >= w[0].height - 1e-12);
        }
        prop_assert_eq!(tree.merges.last().unwrap().size, n);
        for k in 1..n {
            let coarse = tree.cut(k).unwrap();
            let fine = tree.cut(k + 1).unwrap();
            // Every fine cluster lies inside one coarse cluster.
            let mut owner = std::collections::HashMap::new();
            for (f, c) in fine.iter().zip(&coarse) {
                prop_assert_eq!(*owner.entry(*f).or_insert(*c), *c);
            }
        }
    }
}

#[test]
fn standardized_columns_have_unit_sd() {
    let mut pts = random_points(6, 300, 4);
    for (i, r) in pts.iter_mut().enumerate() {
        r[1] = r[1] * 1e5 + 3e5;
        r.push(7.0);
        r[2] += i as f64;
    }
    let z = standardize(&pts).unwrap();
    assert_eq!(z.dropped, vec![4]);
    for j in 0..4 {
        let m = z.rows.iter().map(|r| r[j]).sum::<f64>() / 300.0;
        let sd = (z.rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 300.0).sqrt();
        assert!(m.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn pca_of_collinear_points() {
    let dir: Vec<f64> = (0..11).map(|j| (j as f64 + 1.0).sqrt()).collect();
    let pts: Vec<Vec<f64>> = (0..30).map(|i| dir.iter().map(|d| d * (i as f64 - 7.5)).collect()).collect();
    let pca = pca_project(&pts, 2).unwrap();
    assert!((pca.explained_ratio[0] - 1.0).abs() <= 1e-9);
    assert!(pca.explained_ratio[1].abs() <= 1e-9);
    assert!(matches!(pca_project(&pts[..2], 2), Err(ClusterError::RankTooLow { .. })));
}

#[test]
fn pca_of_isotropic_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u: Vec<f64> = (0..11).map(|j| if j < 2 { 0.0 } else { 1.0 / 3.0 }).collect();
    let v: Vec<f64> = (0..11).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect();
    let pts: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let (a, b) = (gauss(&mut rng), gauss(&mut rng));
            (0..11).map(|j| a * u[j] + b * v[j]).collect()
        })
        .collect();
    let pca = pca_project(&pts, 2).unwrap();
    for r in &pca.explained_ratio {
        assert!((r - 0.5).abs() <= 0.02, "{:?}", pca.explained_ratio);
    }
}

#[test]
fn full_rank_pca_is_an_isometry() {
    let pts = random_points(10, 25, 5);
    let pca = pca_project(&pts, 5).unwrap();
    for i in 0..25 {
        for j in 0..25 {
            let d0 = euclidean(&pts[i], &pts[j]);
            let d1 = euclidean(&pca.coords[i], &pca.coords[j]);
            assert!((d0 - d1).abs() <= 1e-9);
        }
        // Reconstruction from all components.
        for k in 0..5 {
            let rec: f64 = pca.mean[k] + (0..5).map(|c| pca.coords[i][c] * pca.components[c][k]).sum::<f64>();
            assert!((rec - pts[i][k]).abs() <= 1e-9 * (1.0 + pts[i][k].abs()));
        }
    }
    for c in &pca.components {
        let lead = c.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(lead > 0.0);
    }
}

#[test]
fn one_cluster_means_are_column_means() {
    let pts = random_points(12, 20, 3);
    let (means, _) = cluster_means(&vec![0; 20], 1, &pts).unwrap();
    for j in 0..3 {
        let m = pts.iter().map(|r| r[j]).sum::<f64>() / 20.0;
        assert!((means[0][j] - m).abs() <= 1e-12);
    }
    assert!(matches!(cluster_means(&vec![0; 20], 2, &pts), Err(ClusterError::EmptyCluster(1))));
}

#[test]
fn tukey_identical_groups() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let rows = tukey_hsd(&labels, &[0.0; 30], "x".into()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| (r.p - 1.0).abs() <= 1e-6));
    assert!(tukey_hsd(&labels, &[3.5; 30], "x".into()).unwrap().iter().all(|r| r.p == 1.0));
}

#[test]
fn tukey_with_two_groups_is_the_pooled_t_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels: Vec<usize> = (0..45).map(|i| usize::from(i >= 20)).collect();
    let col: Vec<f64> = labels.iter().map(|&l| 0.6 * l as f64 + gauss(&mut rng)).collect();
    let rows = tukey_hsd(&labels, &col, "x".into()).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = (col[..20].to_vec(), col[20..].to_vec());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let sp2 = (ss(&a) + ss(&b)) / 43.0;
    let t = (mean(&a) - mean(&b)) / (sp2 * (1.0 / 20.0 + 1.0 / 25.0)).sqrt();
    let p = t_two_sided_p(t, 43.0).unwrap();
    assert!((rows[0].p - p).abs() <= 1e-4, "{} vs {p}", rows[0].p);
    assert!((rows[0].q - 2f64.sqrt() * t.abs()).abs() <= 1e-9);
}

#[test]
fn tukey_separates_shifted_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<usize> = (0..90).map(|i| i / 30).collect();
    let col: Vec<f64> = labels.iter().map(|&l| if l == 2 { 5.0 } else { 0.0 } + gauss(&mut rng)).collect();
    let rows = tukey_hsd(&labels, &col, "x".into()).unwrap();
    for r in rows {
        let significant = r.p < 0.05;
        assert_eq!(significant, r.cluster_j == 2, "{r:?}");
    }
}

#[test]
fn tukey_drops_singleton_clusters() {
    let labels = vec![0, 0, 0, 1, 1, 1, 2];
    let col = vec![0.0, 1.0, 2.0, 5.0, 6.0, 7.0, 9.0];
    let rows = tukey_hsd(&labels, &col, "x".into()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(matches!(tukey_hsd(&[0, 0, 1], &[1.0, 2.0, 3.0], "x".into()), Err(ClusterError::TooFewGroups(1))));
}

#[test]
fn subject_distribution_properties() {
    let subjects: Vec<String> = vec!["A".into(), "A".into(), "B".into()];
    let dist = subject_distribution(&[0, 0, 1], &subjects, 3);
    assert_eq!(dist[0], ("A".to_string(), vec![1.0, 0.0, 0.0]));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let props = [vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.34, 0.33, 0.33]];
    let mut labels = Vec::new();
    let mut subjects = Vec::new();
    for (s, p) in props.iter().enumerate() {
        for _ in 0..600 {
            let u: f64 = rng.random();
            let l = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
            labels.push(l);
            subjects.push(format!("S{s}"));
        }
    }
    let dist = subject_distribution(&labels, &subjects, 3);
    for ((_, got), want) in dist.iter().zip(&props) {
        assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 0.05, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn ari_basics() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]), 1.0);
}

#[test]
fn synthetic_nrem2_subtypes_are_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write_dataset(dir.path(), 2024, &SynthProfile::mini()).unwrap();
    let load = load_dataset(&dir.path().join("manifest.csv"), 30.0).unwrap();
    let eeg = EegConfig {
        denominator: Denominator::Range { lo_hz: 0.5, hi_hz: 80.0 },
        ..Default::default()
    };
    let subjects: Vec<_> = load
        .recordings
        .iter()
        .map(|r| extract_subject(r, &EcgConfig::default(), &eeg).unwrap())
        .collect();
    let table = build_table(&subjects, None).unwrap();
    let input = cluster_input(&table, SleepStage::N2, None);
    assert!(input.matrix.len() >= 50, "{} N2 rows", input.matrix.len());
    let result = analyze_stage(
        &input,
        &ClusterConfig {
            k: Some(3),
            ..Default::default()
        },
    )
    .unwrap();
    let expected: Vec<usize> = input
        .subjects
        .iter()
        .zip(&input.epochs)
        .map(|(s, &e)| {
            let t = truth.subjects.iter().find(|t| &t.subject_id == s).unwrap();
            t.subtype[e].unwrap()
        })
        .collect();
    let ari = adjusted_rand_index(&result.labels, &expected);
    assert!(ari >= 0.9, "ARI {ari}");
    for (_, p) in &result.distribution {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    assert_eq!(result.means.len(), 3);
    assert_eq!(result.means[0].len(), 11);
}
