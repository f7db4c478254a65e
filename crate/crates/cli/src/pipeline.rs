use std::path::Path;

use anyhow::{Context, Result};
use bhc_core::synth::{write_dataset, SynthProfile, Truth, MANIFEST_FILE, TRUTH_FILE};

use crate::config::PipelineConfig;
use crate::run::Run;

/// True when `dir` already holds a dataset generated from `seed` and
/// `profile` whose files are all present.
fn dataset_is_current(dir: &Path, seed: u64, profile: &SynthProfile) -> bool {
    let Ok(truth) = Truth::read(&dir.join(TRUTH_FILE)) else {
        return false;
    };
    truth.seed == seed
        && &truth.profile == profile
        && dir.join(MANIFEST_FILE).is_file()
        && truth.subjects.iter().all(|s| {
            dir.join(format!("{}.edf", s.subject_id)).is_file()
                && dir.join(format!("{}_hypnogram.csv", s.subject_id)).is_file()
        })
}

/// Write the synthetic dataset into `config.synth.dir`. An existing
/// dataset with the same seed and profile is reused.
pub fn synth(config: &PipelineConfig) -> Result<Truth> {
    let profile = config.synth.profile()?;
    let dir = &config.synth.dir;
    if dataset_is_current(dir, config.seed, &profile) {
        log::info!("reusing synthetic dataset in {}", dir.display());
        return Ok(Truth::read(&dir.join(TRUTH_FILE))?);
    }
    log::info!(
        "generating {} subjects ({} profile, seed {}) in {}",
        profile.n_subjects,
        profile.name,
        config.seed,
        dir.display()
    );
    write_dataset(dir, config.seed, &profile).with_context(|| format!("writing dataset to {}", dir.display()))
}

/// ingest, features, fit, cluster and plot in sequence, generating the
/// synthetic dataset first when configured to.
pub fn run_all(run: &mut Run) -> Result<()> {
    if run.config.synth.generate {
        let config = run.config.clone();
        run.phase("synth", |_| synth(&config))?;
        run.config.dataset = run.config.synth.dir.join(MANIFEST_FILE);
    }
    run.phase("ingest", crate::ingest::ingest)?;
    run.phase("features", crate::features::features)?;
    run.phase("fit", crate::fit::fit)?;
    run.phase("cluster", crate::clusters::cluster)?;
    run.phase("plot", crate::plot::plot)?;
    Ok(())
}
