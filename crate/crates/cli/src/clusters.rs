use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use bhc_core::cluster::{adjusted_rand_index, analyze_stage, cluster_input, ClusterResult};
use bhc_core::features::FeatureTable;
use bhc_core::ingest::SleepStage;
use bhc_core::synth::{Truth, TRUTH_FILE};

use crate::features::load_table;
use crate::ingest::{RecordingIndex, INDEX_FILE};
use crate::run::{to_json, Run};

pub const CLUSTER_DIR: &str = "cluster";
pub const RESULT_FILE: &str = "result.json";

pub fn stage_dir(stage: SleepStage) -> String {
    format!("{CLUSTER_DIR}/{}", stage.label().to_ascii_lowercase())
}

fn write_result(run: &mut Run, r: &ClusterResult) -> Result<()> {
    let dir = stage_dir(r.stage);
    let mut emit = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> bhc_core::Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        run.write(&format!("{dir}/{name}"), &buf)?;
        Ok(())
    };
    emit("labels.csv", &|b| r.write_labels_csv(b))?;
    emit("means.csv", &|b| r.write_means_csv(b))?;
    emit("tukey.csv", &|b| r.write_tukey_csv(b))?;
    emit("pca.csv", &|b| r.write_pca_csv(b))?;
    emit("distribution.csv", &|b| r.write_distribution_csv(b))?;
    run.write(&format!("{dir}/top_features.txt"), r.top_features_text().as_bytes())?;
    run.write(&format!("{dir}/{RESULT_FILE}"), &to_json(r)?)?;
    Ok(())
}

/// Generator subtypes keyed by `(subject, epoch)`, when the dataset was
/// produced by `bhc synth`.
fn truth_subtypes(out_dir: &Path) -> Option<HashMap<(String, usize), usize>> {
    let index = RecordingIndex::read(&out_dir.join(INDEX_FILE)).ok()?;
    let path = index.manifest.parent()?.join(TRUTH_FILE);
    let truth = Truth::read(&path).ok()?;
    let mut map = HashMap::new();
    for s in truth.subjects {
        for (epoch, sub) in s.subtype.iter().enumerate() {
            if let Some(k) = sub {
                map.insert((s.subject_id.clone(), epoch), *k);
            }
        }
    }
    Some(map)
}

/// Adjusted Rand index of the clustering against the generator subtypes,
/// over epochs that carry one.
pub fn truth_agreement(r: &ClusterResult, truth: &HashMap<(String, usize), usize>) -> Option<f64> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..r.labels.len() {
        if let Some(&t) = truth.get(&(r.subjects[i].clone(), r.epochs[i])) {
            a.push(r.labels[i]);
            b.push(t);
        }
    }
    (a.len() >= 2).then(|| adjusted_rand_index(&a, &b))
}

pub fn cluster_table(run: &mut Run, table: &FeatureTable) -> Vec<ClusterResult> {
    let truth = truth_subtypes(&run.out_dir);
    let mut results = Vec::new();
    for stage_cfg in run.config.cluster.stages.clone() {
        let cfg = run.config.cluster.for_stage(&stage_cfg);
        let stage = stage_cfg.stage;
        let input = cluster_input(table, stage, cfg.max_epochs_per_subject);
        let outcome = analyze_stage(&input, &cfg)
            .with_context(|| format!("clustering {} ({} epochs)", stage.label(), input.matrix.len()))
            .and_then(|r| write_result(run, &r).map(|_| r));
        match outcome {
            Ok(r) => {
                if let Some(ari) = truth.as_ref().and_then(|t| truth_agreement(&r, t)) {
                    run.checks.insert(format!("ari_{}", stage.label().to_ascii_lowercase()), ari);
                }
                results.push(r);
            }
            Err(e) => run.fail(&format!("stage {}", stage.label()), format!("{e:#}")),
        }
    }
    results
}

/// Cluster each configured stage. A stage that cannot be clustered is
/// reported and the remaining stages still run.
pub fn cluster(run: &mut Run) -> Result<Vec<ClusterResult>> {
    let table = load_table(&run.out_dir)?;
    crate::features::record_stage_rows(run, &table);
    Ok(cluster_table(run, &table))
}

pub fn load_result(out_dir: &Path, stage: SleepStage) -> Result<ClusterResult> {
    let p = out_dir.join(stage_dir(stage)).join(RESULT_FILE);
    let bytes = std::fs::read(&p).with_context(|| format!("{} not found; run `bhc cluster` first", p.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
