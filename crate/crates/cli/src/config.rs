use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bhc_core::cluster::{ClusterConfig, Linkage};
use bhc_core::dsp::WelchConfig;
use bhc_core::ecg::EcgConfig;
use bhc_core::eeg::{BandDefinition, Denominator, EegConfig, DEFAULT_BANDS};
use bhc_core::ingest::SleepStage;
use bhc_core::lmm::RemlOptions;
use bhc_core::synth::SynthProfile;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset manifest (`subject_id,edf_path,hypnogram_path,exclude`).
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub epoch_len_s: f64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub seed: u64,
    pub synth: SynthSettings,
    pub ecg: EcgConfig,
    pub eeg: EegSettings,
    pub model: ModelSettings,
    pub cluster: ClusterSettings,
    pub plot: PlotSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: PathBuf::from("data/synthetic/manifest.csv"),
            out_dir: PathBuf::from("out"),
            epoch_len_s: 30.0,
            jobs: 0,
            seed: 2024,
            synth: SynthSettings::default(),
            ecg: EcgConfig::default(),
            eeg: EegSettings::default(),
            model: ModelSettings::default(),
            cluster: ClusterSettings::default(),
            plot: PlotSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// `night` or `mini`.
    pub profile: String,
    pub dir: PathBuf,
    /// Let `run-all` generate the dataset before ingesting it.
    pub generate: bool,
    /// Subject indices whose ECG lead is replaced by noise.
    pub corrupt_ecg: Vec<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            profile: "night".into(),
            dir: PathBuf::from("data/synthetic"),
            generate: false,
            corrupt_ecg: Vec::new(),
        }
    }
}

impl SynthSettings {
    pub fn profile(&self) -> Result<SynthProfile> {
        let mut p = SynthProfile::by_name(&self.profile)
            .with_context(|| format!("unknown synthetic profile {:?} (expected night or mini)", self.profile))?;
        p.corrupt_ecg = self.corrupt_ecg.clone();
        Ok(p)
    }
}

/// EEG settings. Unlike the library default, relative powers are taken
/// against 0.5-80 Hz so that the five fractions are not collinear with the
/// model intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegSettings {
    pub bands: [BandDefinition; 5],
    pub welch: WelchConfig,
    pub denominator: Denominator,
}

impl Default for EegSettings {
    fn default() -> Self {
        EegSettings {
            bands: DEFAULT_BANDS,
            welch: WelchConfig::default(),
            denominator: Denominator::Range { lo_hz: 0.5, hi_hz: 80.0 },
        }
    }
}

impl EegSettings {
    pub fn to_core(self) -> EegConfig {
        EegConfig {
            bands: self.bands,
            welch: self.welch,
            denominator: self.denominator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// One model per electrode; otherwise a single model with both.
    pub per_electrode: bool,
    pub reference: SleepStage,
    /// Fixed transform parameter; fitted on the pooled data when absent.
    pub lambda: Option<f64>,
    pub reml: RemlOptions,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            per_electrode: true,
            reference: SleepStage::Wake,
            lambda: None,
            reml: RemlOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageClusters {
    pub stage: SleepStage,
    /// Cluster count; the dendrogram-gap suggestion when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSettings {
    pub linkage: Linkage,
    pub k_max: usize,
    pub max_epochs_per_subject: Option<usize>,
    pub alpha: f64,
    pub top_features: usize,
    pub stages: Vec<StageClusters>,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        let core = ClusterConfig::default();
        ClusterSettings {
            linkage: core.linkage,
            k_max: core.k_max,
            max_epochs_per_subject: core.max_epochs_per_subject,
            alpha: core.alpha,
            top_features: core.top_features,
            stages: vec![
                StageClusters { stage: SleepStage::N2, k: Some(3) },
                StageClusters { stage: SleepStage::Rem, k: Some(4) },
            ],
        }
    }
}

impl ClusterSettings {
    pub fn for_stage(&self, stage: &StageClusters) -> ClusterConfig {
        ClusterConfig {
            linkage: self.linkage,
            k: stage.k,
            k_max: self.k_max,
            max_epochs_per_subject: self.max_epochs_per_subject,
            alpha: self.alpha,
            top_features: self.top_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSettings {
    /// Feature-table columns drawn as subject-mean boxplots by stage.
    pub boxplot_features: Vec<String>,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotSettings {
    fn default() -> Self {
        PlotSettings {
            boxplot_features: vec!["hf_norm".into(), "c3_delta".into(), "c3_beta".into()],
            width: 640,
            height: 420,
        }
    }
}

impl PipelineConfig {
    /// Parse and validate a TOML file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.out_dir, &mut self.synth.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epoch_len_s > 0.0 && self.epoch_len_s.is_finite(), "epoch_len_s must be positive");
        self.synth.profile()?;
        let h = &self.ecg.hrv;
        ensure!(h.interp_hz > 0.0, "ecg.hrv.interp_hz must be positive");
        ensure!((1..=8).contains(&h.modwpt_level), "ecg.hrv.modwpt_level must lie in 1..=8");
        ensure!(
            0.0 < h.filter_low_hz && h.filter_low_hz < h.filter_high_hz && h.filter_high_hz < h.interp_hz / 2.0,
            "ecg.hrv filter band must satisfy 0 < low < high < interp_hz / 2"
        );
        ensure!(
            h.hf_low_hz < h.hf_high_hz && h.total_low_hz < h.total_high_hz,
            "ecg.hrv bands must be increasing"
        );
        ensure!(h.rri_min_ms < h.rri_max_ms, "ecg.hrv.rri_min_ms must be below rri_max_ms");
        ensure!(self.ecg.minmax_window_s > 0.0, "ecg.minmax_window_s must be positive");
        ensure!(self.ecg.pad_s >= 0.0 && self.ecg.dedup_s >= 0.0, "ecg padding must be non-negative");
        self.eeg.to_core().validate()?;
        ensure!(
            (0.0..1.0).contains(&self.eeg.welch.overlap_frac) && self.eeg.welch.seg_len_s > 0.0,
            "eeg.welch needs seg_len_s > 0 and overlap_frac in [0, 1)"
        );
        ensure!(self.model.reference.is_scored(), "model.reference must be a scored stage");
        if let Some(l) = self.model.lambda {
            ensure!(l.is_finite(), "model.lambda must be finite");
        }
        let c = &self.cluster;
        ensure!(c.alpha > 0.0 && c.alpha < 1.0, "cluster.alpha must lie in (0, 1)");
        ensure!(c.k_max >= 2, "cluster.k_max must be at least 2");
        for (i, s) in c.stages.iter().enumerate() {
            ensure!(s.stage.is_scored(), "cluster.stages[{i}] is not a scored stage");
            if let Some(k) = s.k {
                ensure!(k >= 2, "cluster.stages[{i}].k must be at least 2");
            }
            if c.stages[..i].iter().any(|o| o.stage == s.stage) {
                bail!("cluster stage {:?} listed twice", s.stage);
            }
        }
        Ok(())
    }

    /// SHA-256 over the settings that affect results. Output location and
    /// thread count are excluded, so runs that differ only in those share a
    /// hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.jobs = 0;
        c.dataset = PathBuf::from(c.dataset.file_name().unwrap_or_default());
        c.synth.dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Hash of the settings that feed per-subject feature extraction.
    pub fn extraction_hash(&self) -> String {
        let key = (self.epoch_len_s, &self.ecg, &self.eeg);
        sha256_hex(&serde_json::to_vec(&key).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
