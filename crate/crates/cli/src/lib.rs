//! `lauerl` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lauerl::inference::DihedralTransform;

use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lauerl", version, about = "Laue pattern simulation and crystal-alignment agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when no configuration file is given.
    #[arg(long, value_enum, default_value = "cubic")]
    pub preset: PresetArg,
    /// Overrides the configured seed list with a single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PresetArg {
    Cubic,
    Hexagonal,
    Tetragonal,
    ExperimentCubic,
    Desk,
    DeskHexagonal,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Cubic => Preset::Cubic,
            PresetArg::Hexagonal => Preset::Hexagonal,
            PresetArg::Tetragonal => Preset::Tetragonal,
            PresetArg::ExperimentCubic => Preset::ExperimentCubic,
            PresetArg::Desk => Preset::Desk,
            PresetArg::DeskHexagonal => Preset::DeskHexagonal,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write randomized patterns, observations and ground-truth labels.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one agent per seed and export metric curves.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in each seed directory.
        #[arg(long)]
        resume: bool,
        /// Skip the resumable checkpoint written after each evaluation.
        #[arg(long)]
        no_checkpoint: bool,
    },
    /// Evaluate an agent, an ensemble or the scripted oracle.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Test-time augmentation; without values, all six dihedral views.
        #[arg(long, num_args = 0.., value_parser = parse_transform)]
        tta: Option<Vec<DihedralTransform>>,
        #[arg(long, num_args = 1..)]
        ensemble: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Replay recorded detector frames through the agent.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        fine: bool,
        images: Vec<PathBuf>,
    },
    /// Train and score the orientation classifier.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Hough fine alignment on frames, or a simulated benchmark without frames.
    Finealign {
        #[command(flatten)]
        common: Common,
        images: Vec<PathBuf>,
    },
}

fn parse_transform(s: &str) -> Result<DihedralTransform, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected identity, mirror-x, mirror-y, rotate-180, transpose or anti-transpose".to_string()
    })
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_preset(common.preset.into()),
    };
    Ok(cfg.with_overrides(common.seed, common.out.clone()))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, count } => {
            let mut cfg = resolve(&common)?;
            if let Some(c) = count {
                cfg.simulate.count = c;
            }
            commands::simulate(&cfg)
        }
        Command::Train { common, resume, no_checkpoint } => commands::train(&resolve(&common)?, resume, !no_checkpoint),
        Command::Eval { common, checkpoint, oracle, tta, ensemble, episodes } => {
            let mut cfg = resolve(&common)?;
            let e = &mut cfg.eval;
            if checkpoint.is_some() {
                e.checkpoint = checkpoint;
            }
            e.oracle |= oracle;
            if let Some(t) = tta {
                e.tta = if t.is_empty() { DihedralTransform::ALL.to_vec() } else { t };
            }
            e.ensemble.extend(ensemble);
            if let Some(n) = episodes {
                e.episodes = n;
            }
            commands::eval(&cfg)
        }
        Command::Align { common, checkpoint, classifier, fine, images } => {
            let mut cfg = resolve(&common)?;
            let a = &mut cfg.align;
            if checkpoint.is_some() {
                a.checkpoint = checkpoint;
            }
            if classifier.is_some() {
                a.classifier = classifier;
            }
            a.fine |= fine;
            a.images.extend(images);
            commands::align(&cfg)
        }
        Command::Classify { common } => commands::classify(&resolve(&common)?),
        Command::Finealign { common, images } => {
            let mut cfg = resolve(&common)?;
            cfg.finealign.images.extend(images);
            commands::finealign(&cfg)
        }
    }
}
