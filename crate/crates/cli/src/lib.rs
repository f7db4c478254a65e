//! Command-line driver: `bhc ingest | features | fit | cluster | plot |
//! run-all | synth`. Every command writes its outputs atomically into the
//! output directory together with `run_manifest.json`.

pub mod clusters;
pub mod config;
pub mod features;
pub mod fit;
pub mod ingest;
pub mod logging;
pub mod pipeline;
pub mod plot;
pub mod run;
pub mod svg;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::run::{Run, Status};

#[derive(Debug, Parser)]
#[command(name = "bhc", version, about = "Brain-heart coupling analysis of overnight polysomnography")]
pub struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, short, global = true, env = "BHC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory (for `synth`, the dataset directory).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, short, global = true)]
    pub jobs: Option<usize>,
    /// Seed for the synthetic generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Validate the dataset manifest and write index.json.
    Ingest {
        /// Dataset manifest, overriding the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Extract per-epoch EEG and HRV features into features.csv.
    Features,
    /// Fit the mixed-effects models.
    Fit,
    /// Cluster the configured stages.
    Cluster,
    /// Render SVG figures from earlier outputs.
    Plot,
    /// Run every step in order.
    RunAll {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with known ground truth.
    Synth {
        /// `night` or `mini`.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Features => "features",
            Command::Fit => "fit",
            Command::Cluster => "cluster",
            Command::Plot => "plot",
            Command::RunAll { .. } => "run-all",
            Command::Synth { .. } => "synth",
            Command::Config => "config",
        }
    }
}

/// Effective configuration after applying command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match &cli.command {
        Command::Synth { profile } => {
            if let Some(p) = profile {
                config.synth.profile = p.clone();
            }
            if let Some(o) = &cli.out {
                config.synth.dir = o.clone();
            }
        }
        Command::Ingest { dataset } | Command::RunAll { dataset } => {
            if let Some(d) = dataset {
                config.dataset = d.clone();
                config.synth.generate = false;
            }
            if let Some(o) = &cli.out {
                config.out_dir = o.clone();
            }
        }
        _ => {
            if let Some(o) = &cli.out {
                config.out_dir = o.clone();
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: &Cli, config: PipelineConfig) -> Result<Status> {
    let command = cli.command.name();
    match &cli.command {
        Command::Config => {
            print!("{}", toml::to_string(&config)?);
            return Ok(Status::Complete);
        }
        Command::Synth { .. } => {
            let truth = pipeline::synth(&config)?;
            println!("{} subjects in {}", truth.subjects.len(), config.synth.dir.display());
            return Ok(Status::Complete);
        }
        _ => {}
    }
    let mut run = Run::new(config);
    let result = match &cli.command {
        Command::Ingest { .. } => run.phase("ingest", ingest::ingest).map(drop),
        Command::Features => run.phase("features", features::features).map(drop),
        Command::Fit => run.phase("fit", fit::fit).map(drop),
        Command::Cluster => run.phase("cluster", clusters::cluster).map(drop),
        Command::Plot => run.phase("plot", plot::plot),
        Command::RunAll { .. } => pipeline::run_all(&mut run),
        Command::Synth { .. } | Command::Config => unreachable!(),
    };
    result?;
    let out_dir = run.out_dir.clone();
    let status = run.finish(command)?;
    if status == Status::Partial {
        eprintln!("bhc {command}: finished with failures; see {}", out_dir.join(run::RUN_MANIFEST).display());
    }
    Ok(status)
}

/// Run a parsed command line. Errors are fatal; partial success is
/// reported through the returned status.
pub fn execute(cli: &Cli) -> Result<Status> {
    let config = effective_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .context("building thread pool")?;
    pool.install(|| dispatch(cli, config))
}
