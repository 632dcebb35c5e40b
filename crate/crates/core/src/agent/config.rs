use serde::{Deserialize, Serialize};

use crate::error::{LaueError, Result};
use crate::geometry::CrystalSystem;
use crate::nn::mlp::HIDDEN_DIM;
use crate::nn::encoder::FEATURE_DIM;

/// `linear(init, final, duration)` exploration noise schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StddevSchedule {
    pub init: f64,
    pub end: f64,
    pub duration: u64,
}

impl StddevSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let mix = if self.duration == 0 { 1.0 } else { (step as f64 / self.duration as f64).clamp(0.0, 1.0) };
        (1.0 - mix) * self.init + mix * self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DormantConfig {
    pub enabled: bool,
    pub threshold: f64,
    pub min_perturb_factor: f64,
    pub max_perturb_factor: f64,
    pub interval: u64,
    /// Slope of the ratio-to-factor map.
    pub perturb_rate: f64,
    /// Stored only.
    pub temperature: f64,
}

impl Default for DormantConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold: 0.025,
            min_perturb_factor: 0.2,
            max_perturb_factor: 1.0,
            interval: 20_000,
            perturb_rate: 1.0,
            temperature: 10.0,
        }
    }
}

/// Exploitation-side hyperparameters of the full method. Kept for the record; unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploitationConfig {
    pub target_exploitation: f64,
    pub expectile: f64,
    pub stddev_type: String,
}

impl Default for ExploitationConfig {
    fn default() -> Self {
        Self { target_exploitation: 0.6, expectile: 0.9, stddev_type: "awake".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub seed_frames: u64,
    pub exploration_steps: u64,
    pub train_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub stddev: StddevSchedule,
    pub stddev_clip: f64,
    pub nstep: usize,
    pub eval_episodes: usize,
    pub eval_interval: u64,
    pub frame_stack: usize,
    pub action_repeat: usize,
    /// Replay capacity; `None` means `train_steps`.
    #[serde(default)]
    pub replay_capacity: Option<usize>,
    pub shift_pad: usize,
    #[serde(default)]
    pub dormant: DormantConfig,
    #[serde(default)]
    pub exploitation: ExploitationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            seed_frames: 2000,
            exploration_steps: 1000,
            train_steps: 200_000,
            batch_size: 256,
            lr: 1e-4,
            tau: 0.01,
            feature_dim: FEATURE_DIM,
            hidden_dim: HIDDEN_DIM,
            stddev: StddevSchedule { init: 1.0, end: 0.1, duration: 100_000 },
            stddev_clip: 0.3,
            nstep: 3,
            eval_episodes: 100,
            eval_interval: 5000,
            frame_stack: 1,
            action_repeat: 1,
            replay_capacity: None,
            shift_pad: 4,
            dormant: DormantConfig::default(),
            exploitation: ExploitationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn preset(system: CrystalSystem) -> Self {
        let train_steps = match system {
            CrystalSystem::Cubic => 200_000,
            _ => 300_000,
        };
        Self { train_steps, ..Self::default() }
    }

    pub fn desk() -> Self {
        Self { train_steps: 40_000, ..Self::default() }
    }

    /// Ring size in stored frames.
    pub fn replay_capacity(&self) -> usize {
        self.replay_capacity.unwrap_or(self.train_steps as usize).max(self.batch_size + self.nstep + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LaueError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.stddev.init > 0.0 && self.stddev.end > 0.0) {
            return bad("stddev schedule endpoints must be positive");
        }
        if !(self.stddev_clip >= 0.0 && self.lr > 0.0) {
            return bad("stddev_clip must be >= 0 and lr > 0");
        }
        if self.batch_size == 0 || self.nstep == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("batch_size, nstep, feature_dim and hidden_dim must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        if self.frame_stack != 1 || self.action_repeat != 1 {
            return bad("only frame_stack = 1 and action_repeat = 1 are supported");
        }
        let d = &self.dormant;
        if !(0.0 < d.min_perturb_factor && d.min_perturb_factor <= d.max_perturb_factor && d.max_perturb_factor <= 1.0) {
            return bad("dormant perturb factors must satisfy 0 < min <= max <= 1");
        }
        if d.enabled && d.interval == 0 {
            return bad("dormant interval must be positive");
        }
        Ok(())
    }
}
