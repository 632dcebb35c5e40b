//! Versioned run configuration.
//!
//! `env` and `train` are partial JSON objects merged over the preset, then
//! checked against the typed schema, so unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use lauerl::agent::TrainConfig;
use lauerl::env::EnvConfig;
use lauerl::geometry::CrystalSystem;
use lauerl::inference::{ClassifierConfig, DihedralTransform};
use lauerl::pattern_io::PipelineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Cubic,
    Hexagonal,
    Tetragonal,
    /// Halved ranges matched to the physical goniometer, cubic crystal.
    ExperimentCubic,
    /// Fixed cubic crystal, ±30° offsets, (001)-family targets, 40k steps.
    Desk,
    /// Fixed hexagonal crystal, ±30° offsets, c-axis targets, 40k steps.
    DeskHexagonal,
}

impl Preset {
    pub fn env(self) -> EnvConfig {
        match self {
            Preset::Cubic => EnvConfig::preset(CrystalSystem::Cubic),
            Preset::Hexagonal => EnvConfig::preset(CrystalSystem::Hexagonal),
            Preset::Tetragonal => EnvConfig::preset(CrystalSystem::Tetragonal),
            Preset::ExperimentCubic => EnvConfig::experiment_matched(CrystalSystem::Cubic),
            Preset::Desk => EnvConfig::desk(),
            Preset::DeskHexagonal => EnvConfig { initial_range_deg: 30.0, ..EnvConfig::fixed(CrystalSystem::Hexagonal) },
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Cubic | Preset::ExperimentCubic => TrainConfig::preset(CrystalSystem::Cubic),
            Preset::Hexagonal => TrainConfig::preset(CrystalSystem::Hexagonal),
            Preset::Tetragonal => TrainConfig::preset(CrystalSystem::Tetragonal),
            Preset::Desk | Preset::DeskHexagonal => TrainConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub count: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self { count: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Weights file written by `train`.
    pub checkpoint: Option<PathBuf>,
    /// Scripted controller instead of an agent.
    pub oracle: bool,
    /// Dihedral views averaged per decision; empty disables test-time augmentation.
    pub tta: Vec<DihedralTransform>,
    /// Further weights files averaged with `checkpoint`.
    pub ensemble: Vec<PathBuf>,
    /// Episodes written to the stereographic export.
    pub trajectories: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { episodes: 100, checkpoint: None, oracle: false, tta: Vec::new(), ensemble: Vec::new(), trajectories: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignOptions {
    pub checkpoint: Option<PathBuf>,
    /// Classifier weights; enables the end-of-episode decision.
    pub classifier: Option<PathBuf>,
    /// Hough corrections once the classifier fires.
    pub fine: bool,
    /// Fixed calibration slope; fitted on simulated patterns when absent.
    pub k1: Option<f64>,
    pub images: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub train_samples: usize,
    pub test_samples: usize,
    pub tolerance_deg: f64,
    pub near_miss_max_deg: f64,
    pub training: ClassifierConfig,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            train_samples: 20_000,
            test_samples: 20_000,
            tolerance_deg: 5.0,
            near_miss_max_deg: 15.0,
            training: ClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineAlignOptions {
    /// Simulated offset patterns, used when no images are given.
    pub samples: usize,
    pub max_offset_deg: f64,
    pub calibration_samples: usize,
    pub k1: Option<f64>,
    pub images: Vec<PathBuf>,
}

impl Default for FineAlignOptions {
    fn default() -> Self {
        Self { samples: 200, max_offset_deg: 5.0, calibration_samples: 40, k1: None, images: Vec::new() }
    }
}

/// The file as written by the user.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    env: Option<Value>,
    #[serde(default)]
    train: Option<Value>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    simulate: SimulateOptions,
    #[serde(default)]
    eval: EvalOptions,
    #[serde(default)]
    align: AlignOptions,
    #[serde(default)]
    classify: ClassifyOptions,
    #[serde(default)]
    finealign: FineAlignOptions,
    #[serde(default)]
    pipeline: PipelineConfig,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub version: u32,
    pub preset: Preset,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Not part of the hash.
    #[serde(skip)]
    pub out: PathBuf,
    pub simulate: SimulateOptions,
    pub eval: EvalOptions,
    pub align: AlignOptions,
    pub classify: ClassifyOptions,
    pub finealign: FineAlignOptions,
    pub pipeline: PipelineConfig,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                if v.is_object() && b.get(&k).is_some_and(Value::is_object) {
                    merge(b.get_mut(&k).expect("checked"), v);
                } else {
                    b.insert(k, v);
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: T, patch: Option<Value>, what: &str) -> CliResult<T> {
    let Some(patch) = patch else { return Ok(base) };
    let mut v = serde_json::to_value(&base).map_err(|e| CliError::Other(e.to_string()))?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if raw.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("schema version {} is not supported (expected {SCHEMA_VERSION})", raw.version)));
        }
        let env = overlay(raw.preset.env(), raw.env, "env")?;
        let train = overlay(raw.preset.train(), raw.train, "train")?;
        env.validate()?;
        train.validate()?;
        raw.pipeline.validate()?;
        let cfg = Self {
            version: raw.version,
            preset: raw.preset,
            env,
            train,
            seeds: if raw.seeds.is_empty() { vec![0] } else { raw.seeds },
            out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
            simulate: raw.simulate,
            eval: raw.eval,
            align: raw.align,
            classify: raw.classify,
            finealign: raw.finealign,
            pipeline: raw.pipeline,
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Preset defaults, for runs without a config file.
    pub fn from_preset(preset: Preset) -> Self {
        let text = serde_json::json!({ "version": SCHEMA_VERSION, "preset": preset }).to_string();
        Self::from_json(&text).expect("presets are valid")
    }

    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.out = o;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// SHA-256 of the resolved configuration, output directory excluded.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
