use std::path::Path;

use anyhow::{bail, Context, Result};
use bhc_core::eeg::Electrode;
use bhc_core::features::FeatureTable;
use bhc_core::lmm::{
    build_design, fit_reml, residual_diagnostics, stage_slopes, write_effect_table, write_effects_csv, CovariateSet,
    Diagnostics, EffectReport, ModelFit, ModelSpec,
};
use serde::{Deserialize, Serialize};

use crate::features::load_table;
use crate::run::{to_json, Run};

pub const FIT_DIR: &str = "fit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub tag: String,
    pub spec: ModelSpec,
    pub lambda_yj: f64,
    pub fit: ModelFit,
}

pub struct FittedModel {
    pub output: ModelOutput,
    pub report: EffectReport,
    pub diagnostics: Diagnostics,
}

pub fn model_specs(run: &Run) -> Vec<(String, ModelSpec)> {
    let reference = run.config.model.reference;
    if run.config.model.per_electrode {
        Electrode::ALL
            .iter()
            .map(|&e| {
                (
                    e.prefix().to_string(),
                    ModelSpec {
                        covariates: CovariateSet::Electrode(e),
                        reference,
                    },
                )
            })
            .collect()
    } else {
        vec![(
            "pooled".to_string(),
            ModelSpec {
                covariates: CovariateSet::Pooled,
                reference,
            },
        )]
    }
}

pub fn fit_model(table: &FeatureTable, tag: &str, spec: &ModelSpec, run: &Run) -> Result<FittedModel> {
    let design = build_design(table, spec).with_context(|| format!("{tag}: building design"))?;
    let fit = fit_reml(&design.design, &run.config.model.reml).with_context(|| format!("{tag}: REML fit"))?;
    let report = stage_slopes(&fit, &design).with_context(|| format!("{tag}: stage slopes"))?;
    let diagnostics = residual_diagnostics(&fit, &design.design);
    Ok(FittedModel {
        output: ModelOutput {
            tag: tag.to_string(),
            spec: spec.clone(),
            lambda_yj: table.lambda_yj,
            fit,
        },
        report,
        diagnostics,
    })
}

fn write_model(run: &mut Run, m: &FittedModel) -> Result<()> {
    let tag = &m.output.tag;
    let mut buf = Vec::new();
    write_effects_csv(&mut buf, &m.report.slopes)?;
    run.write(&format!("{FIT_DIR}/{tag}_effects.csv"), &buf)?;
    let mut buf = Vec::new();
    write_effects_csv(&mut buf, &m.report.contrasts)?;
    run.write(&format!("{FIT_DIR}/{tag}_contrasts.csv"), &buf)?;
    let mut buf = Vec::new();
    write_effect_table(&mut buf, &m.report.slopes)?;
    run.write(&format!("{FIT_DIR}/{tag}_table.tsv"), &buf)?;
    run.write(&format!("{FIT_DIR}/{tag}_model.json"), &to_json(&m.output)?)?;
    run.write(&format!("{FIT_DIR}/{tag}_diagnostics.json"), &to_json(&m.diagnostics)?)?;
    Ok(())
}

/// Fit the configured models on `features.csv` and write effect tables and
/// residual diagnostics. A model that fails is reported and skipped.
pub fn fit(run: &mut Run) -> Result<Vec<FittedModel>> {
    let table = load_table(&run.out_dir)?;
    crate::features::record_stage_rows(run, &table);
    let mut fitted = Vec::new();
    for (tag, spec) in model_specs(run) {
        match fit_model(&table, &tag, &spec, run) {
            Ok(m) => {
                if !m.output.fit.converged {
                    run.warn(format!("{tag}: REML did not converge in {} iterations", m.output.fit.iterations));
                }
                if m.output.fit.at_boundary.iter().any(|&b| b) {
                    log::info!("{tag}: variance ratio at boundary {:?}", m.output.fit.at_boundary);
                }
                write_model(run, &m)?;
                fitted.push(m);
            }
            Err(e) => run.fail(&format!("model {tag}"), format!("{e:#}")),
        }
    }
    if fitted.is_empty() {
        bail!("no model could be fitted");
    }
    Ok(fitted)
}

/// Read back the artifacts written by [`fit`] for one tag.
pub fn load_model(out_dir: &Path, tag: &str) -> Result<(ModelOutput, Diagnostics)> {
    let read = |name: String| -> Result<Vec<u8>> {
        let p = out_dir.join(FIT_DIR).join(name);
        std::fs::read(&p).with_context(|| format!("{} not found; run `bhc fit` first", p.display()))
    };
    let model = serde_json::from_slice(&read(format!("{tag}_model.json"))?)?;
    let diag = serde_json::from_slice(&read(format!("{tag}_diagnostics.json"))?)?;
    Ok((model, diag))
}
