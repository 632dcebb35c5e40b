//! Training loop, evaluation and resumable state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dormant::dormant_perturb;
use super::{uniform_action, Agent, Policy, ReplayBuffer, TrainConfig, UpdateMetrics};
use crate::env::{EnvConfig, EnvSnapshot, EpisodeRecord, LaueEnv};
use crate::error::{LaueError, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::render::Observation;

/// Worker count: `LAUERL_THREADS` when set, else the available cores.
pub fn worker_threads() -> usize {
    std::env::var("LAUERL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
    /// `histogram[k]` counts episodes of length `k + 1`.
    pub histogram: Vec<usize>,
    pub successes: Vec<bool>,
    pub records: Vec<EpisodeRecord>,
}

fn episode_rngs(seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(2 * index as u64);
    let mut pol_rng = ChaCha8Rng::seed_from_u64(seed);
    pol_rng.set_stream(2 * index as u64 + 1);
    (env_rng, pol_rng)
}

fn run_episode<P: Policy + ?Sized>(policy: &P, cfg: &EnvConfig, seed: u64, index: usize) -> Result<(bool, EpisodeRecord)> {
    let (env_rng, mut rng) = episode_rngs(seed, index);
    let mut env = LaueEnv::with_rng(cfg.clone(), env_rng)?;
    let (mut obs, _) = env.reset()?;
    loop {
        let a = policy.act(&obs, &env, &mut rng);
        let r = env.step(a)?;
        if r.terminated || r.truncated {
            let record = env.episode().map(|e| e.record.clone()).unwrap_or_default();
            return Ok((r.terminated, record));
        }
        obs = r.observation;
    }
}

/// Runs `episodes` episodes. Episode `i` is seeded from `(seed, i)` alone, so
/// results do not depend on the thread count.
pub fn evaluate<P: Policy + ?Sized>(policy: &P, cfg: &EnvConfig, episodes: usize, seed: u64, threads: usize) -> Result<EvalStats> {
    cfg.validate()?;
    let threads = threads.clamp(1, episodes.max(1));
    let mut results: Vec<Option<Result<(bool, EpisodeRecord)>>> = (0..episodes).map(|_| None).collect();
    if threads == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_episode(policy, cfg, seed, i));
        }
    } else {
        let chunk = episodes.div_ceil(threads);
        std::thread::scope(|s| {
            for (c, part) in results.chunks_mut(chunk).enumerate() {
                s.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(run_episode(policy, cfg, seed, c * chunk + j));
                    }
                });
            }
        });
    }
    let mut stats = EvalStats {
        episodes,
        success_rate: 0.0,
        mean_length: 0.0,
        mean_reward: 0.0,
        histogram: vec![0; cfg.max_steps],
        successes: Vec::with_capacity(episodes),
        records: Vec::with_capacity(episodes),
    };
    for r in results {
        let (ok, rec) = r.expect("every episode ran")?;
        let len = rec.len();
        if len >= 1 && len <= cfg.max_steps {
            stats.histogram[len - 1] += 1;
        }
        stats.success_rate += ok as u8 as f64;
        stats.mean_length += len as f64;
        stats.mean_reward += rec.total_reward();
        stats.successes.push(ok);
        stats.records.push(rec);
    }
    let n = episodes.max(1) as f64;
    stats.success_rate /= n;
    stats.mean_length /= n;
    stats.mean_reward /= n;
    Ok(stats)
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub mean_episode_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub stddev: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "step,success_rate,mean_episode_length,mean_episode_reward,actor_loss,critic_loss,stddev";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.success_rate, self.mean_episode_length, self.mean_episode_reward, self.actor_loss, self.critic_loss, self.stddev
        )
    }
}

pub fn write_metrics<W: Write>(mut w: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(w, "{}", MetricRow::HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    env_cfg: EnvConfig,
    cfg: TrainConfig,
    seed: u64,
    step: u64,
    rng: ChaCha8Rng,
    env: EnvSnapshot,
    obs: Option<Observation>,
    metrics: Vec<MetricRow>,
    loss_sum: [f64; 2],
    loss_count: u64,
    opt_steps: [u64; 3],
}

pub struct Trainer {
    pub env_cfg: EnvConfig,
    pub cfg: TrainConfig,
    pub seed: u64,
    pub agent: Agent,
    pub replay: ReplayBuffer,
    pub step: u64,
    pub metrics: Vec<MetricRow>,
    /// Worker threads for evaluation.
    pub threads: usize,
    env: LaueEnv,
    rng: ChaCha8Rng,
    obs: Option<Observation>,
    loss_sum: [f64; 2],
    loss_count: u64,
}

impl Trainer {
    pub fn new(env_cfg: EnvConfig, cfg: TrainConfig, seed: u64) -> Result<Self> {
        env_cfg.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(&cfg, &mut rng);
        let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
        env_rng.set_stream(1);
        let env = LaueEnv::with_rng(env_cfg.clone(), env_rng)?;
        Ok(Self {
            replay: ReplayBuffer::new(cfg.replay_capacity()),
            env_cfg,
            cfg,
            seed,
            agent,
            step: 0,
            metrics: Vec::new(),
            threads: worker_threads(),
            env,
            rng,
            obs: None,
            loss_sum: [0.0; 2],
            loss_count: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.train_steps
    }

    pub fn stddev(&self) -> f64 {
        self.cfg.stddev.at(self.step)
    }

    /// One environment step, one update once warm, and an evaluation on schedule.
    pub fn train_step(&mut self) -> Result<Option<UpdateMetrics>> {
        let obs = match self.obs.take() {
            Some(o) => o,
            None => {
                let (o, _) = self.env.reset()?;
                self.replay.push_first(&o);
                o
            }
        };
        let action = if self.step < self.cfg.seed_frames + self.cfg.exploration_steps {
            uniform_action(&mut self.rng)
        } else {
            self.agent.act(&obs, self.stddev(), self.cfg.stddev_clip, false, &mut self.rng)?
        };
        let r = self.env.step(action)?;
        self.replay.push(action, r.reward, &r.observation, r.terminated);
        if !(r.terminated || r.truncated) {
            self.obs = Some(r.observation);
        }

        let mut out = None;
        if self.step >= self.cfg.seed_frames && self.replay.transitions() >= self.cfg.batch_size {
            let batch = self.replay.sample(self.cfg.batch_size, self.cfg.nstep, self.cfg.gamma, &mut self.rng)?;
            let m = self.agent.update(&batch, &self.cfg, self.stddev(), &mut self.rng)?;
            self.loss_sum[0] += m.actor_loss;
            self.loss_sum[1] += m.critic_loss;
            self.loss_count += 1;
            out = Some(m);
        }
        self.step += 1;

        let d = &self.cfg.dormant;
        if d.enabled && self.step > self.cfg.seed_frames && self.step % d.interval == 0 {
            let obs = self.replay.sample_observations(self.cfg.batch_size, &mut self.rng)?;
            let (ratio, f) = dormant_perturb(&mut self.agent, &obs, &self.cfg, &mut self.rng)?;
            log::info!("step {}: dormant ratio {ratio:.4}, perturb factor {f:.3}", self.step);
        }
        if self.step % self.cfg.eval_interval == 0 || self.step == self.cfg.train_steps {
            self.evaluate_now()?;
        }
        Ok(out)
    }

    fn evaluate_now(&mut self) -> Result<()> {
        let eval_seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.step);
        let stats = evaluate(&self.agent, &self.env_cfg, self.cfg.eval_episodes, eval_seed, self.threads)?;
        let n = self.loss_count.max(1) as f64;
        let row = MetricRow {
            step: self.step,
            success_rate: stats.success_rate,
            mean_episode_length: stats.mean_length,
            mean_episode_reward: stats.mean_reward,
            actor_loss: self.loss_sum[0] / n,
            critic_loss: self.loss_sum[1] / n,
            stddev: self.stddev(),
        };
        log::info!("{}", row.csv_line());
        self.metrics.push(row);
        self.loss_sum = [0.0; 2];
        self.loss_count = 0;
        Ok(())
    }

    /// Runs to `train_steps`, saving resumable state into `checkpoint_dir`
    /// after every evaluation when given.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        while !self.done() {
            let evals = self.metrics.len();
            self.train_step()?;
            if let (Some(dir), true) = (checkpoint_dir, self.metrics.len() > evals) {
                self.save(dir)?;
            }
        }
        Ok(())
    }

    pub fn write_metrics<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_metrics(w, &self.metrics)
    }

    /// Network weights only.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        write_checkpoint(BufWriter::new(File::create(path)?), &self.agent.to_tensors())
    }

    /// Complete state: networks, optimizer moments, replay, environment and RNG.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tensors = self.agent.to_tensors();
        let (opt, opt_steps) = self.agent.optimizer_tensors();
        tensors.extend(opt);
        write_checkpoint(BufWriter::new(File::create(dir.join("agent.ckpt"))?), &tensors)?;
        let mut w = BufWriter::new(File::create(dir.join("replay.bin"))?);
        self.replay.write_to(&mut w)?;
        w.flush()?;
        let state = TrainState {
            env_cfg: self.env_cfg.clone(),
            cfg: self.cfg.clone(),
            seed: self.seed,
            step: self.step,
            rng: self.rng.clone(),
            env: self.env.snapshot(),
            obs: self.obs.clone(),
            metrics: self.metrics.clone(),
            loss_sum: self.loss_sum,
            loss_count: self.loss_count,
            opt_steps,
        };
        let f = BufWriter::new(File::create(dir.join("state.json"))?);
        serde_json::to_writer(f, &state).map_err(|e| LaueError::Checkpoint(e.to_string()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(dir.join("state.json"))?);
        let s: TrainState = serde_json::from_reader(f).map_err(|e| LaueError::Checkpoint(e.to_string()))?;
        let mut t = Trainer::new(s.env_cfg, s.cfg, s.seed)?;
        let tensors = read_checkpoint(BufReader::new(File::open(dir.join("agent.ckpt"))?))?;
        t.agent.load_tensors(&tensors)?;
        t.agent.load_optimizer_tensors(&tensors, s.opt_steps)?;
        t.replay = ReplayBuffer::read_from(BufReader::new(File::open(dir.join("replay.bin"))?))?;
        t.env = LaueEnv::restore(s.env)?;
        t.step = s.step;
        t.rng = s.rng;
        t.obs = s.obs;
        t.metrics = s.metrics;
        t.loss_sum = s.loss_sum;
        t.loss_count = s.loss_count;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{OraclePolicy, RandomPolicy};

    fn tiny() -> TrainConfig {
        TrainConfig {
            seed_frames: 20,
            exploration_steps: 10,
            train_steps: 40,
            batch_size: 4,
            hidden_dim: 16,
            eval_episodes: 2,
            eval_interval: 20,
            ..TrainConfig::default()
        }
    }

    fn quick_env() -> EnvConfig {
        EnvConfig { max_steps: 8, spot_count: 20, ..EnvConfig::desk() }
    }

    #[test]
    fn oracle_and_random_through_evaluate() {
        let cfg = EnvConfig::desk();
        let oracle = evaluate(&OraclePolicy, &cfg, 20, 1, 1).unwrap();
        assert_eq!(oracle.success_rate, 1.0);
        assert_eq!(oracle.histogram.len(), cfg.max_steps);
        assert_eq!(oracle.histogram.iter().sum::<usize>(), 20);
        let random = evaluate(&RandomPolicy, &cfg, 20, 1, 1).unwrap();
        assert!(random.success_rate < 0.5, "{}", random.success_rate);
        assert!(random.records.iter().all(|r| r.len() <= cfg.max_steps));
    }

    #[test]
    fn evaluation_independent_of_threads() {
        let cfg = quick_env();
        let a = evaluate(&RandomPolicy, &cfg, 6, 9, 1).unwrap();
        let b = evaluate(&RandomPolicy, &cfg, 6, 9, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_seed_reproduces_metrics() {
        let run = || {
            let mut t = Trainer::new(quick_env(), tiny(), 3).unwrap();
            t.threads = 1;
            t.run(None).unwrap();
            let mut out = Vec::new();
            t.write_metrics(&mut out).unwrap();
            out
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(MetricRow::HEADER));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut full = Trainer::new(quick_env(), tiny(), 4).unwrap();
        full.threads = 1;
        full.run(None).unwrap();

        let mut first = Trainer::new(quick_env(), tiny(), 4).unwrap();
        first.threads = 1;
        for _ in 0..27 {
            first.train_step().unwrap();
        }
        first.save(dir.path()).unwrap();
        let mut resumed = Trainer::load(dir.path()).unwrap();
        resumed.threads = 1;
        resumed.run(None).unwrap();
        assert_eq!(resumed.metrics, full.metrics);
        assert_eq!(resumed.agent.to_tensors(), full.agent.to_tensors());
    }
}
