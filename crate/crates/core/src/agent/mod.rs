//! Off-policy actor-critic on pixel observations.
//!
//! A shared convolutional encoder feeds a deterministic tanh actor and two
//! critics. Only the critic loss trains the encoder; the actor sees detached
//! features.

pub mod config;
pub mod dormant;
pub mod replay;
pub mod train;

pub use config::{DormantConfig, StddevSchedule, TrainConfig};
pub use replay::{nstep_return, nstep_target, Batch, ReplayBuffer};
pub use train::{evaluate, worker_threads, EvalStats, MetricRow, Trainer};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Action, LaueEnv};
use crate::error::{LaueError, Result};
use crate::nn::augment::random_shift_batch;
use crate::nn::checkpoint::{from_params, load_params, NamedTensor};
use crate::nn::{Adam, Encoder, Mlp, Module, Param, Tensor};
use crate::render::{Observation, OBS_SIZE};

/// Anything that maps an observation to an action.
pub trait Policy: Sync {
    fn act(&self, obs: &Observation, env: &LaueEnv, rng: &mut ChaCha8Rng) -> Action;
}

/// Scripted controller with access to the true orientation.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn act(&self, _obs: &Observation, env: &LaueEnv, _rng: &mut ChaCha8Rng) -> Action {
        env.oracle_action().unwrap_or([0.0, 0.0])
    }
}

/// Uniform actions in [−1, 1]².
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _obs: &Observation, _env: &LaueEnv, rng: &mut ChaCha8Rng) -> Action {
        uniform_action(rng)
    }
}

pub fn uniform_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

/// Zero-mean Gaussian draw with standard deviation `stddev`, clipped to `±clip`.
pub fn clipped_noise<R: Rng + ?Sized>(stddev: f64, clip: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (z * stddev).clamp(-clip, clip)
}

/// Per-update diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub q_mean: f64,
    pub target_mean: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub encoder: Encoder<f32>,
    pub actor: Mlp<f32>,
    pub critics: [Mlp<f32>; 2],
    pub targets: [Mlp<f32>; 2],
    pub encoder_opt: Adam<f32>,
    pub actor_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
}

fn obs_batch(obs: &[&Observation]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(obs.len() * OBS_SIZE * OBS_SIZE);
    for o in obs {
        data.extend_from_slice(o.as_slice());
    }
    Tensor { shape: vec![obs.len(), 1, OBS_SIZE, OBS_SIZE], data }
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LaueError::NonFinite(what))
    }
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Self {
        let (f, h) = (cfg.feature_dim, cfg.hidden_dim);
        let encoder = Encoder::with_input("encoder", 1, f, rng);
        let actor = Mlp::new("actor", f, h, 2, true, rng);
        let critics = [Mlp::new("critic1", f + 2, h, 1, false, rng), Mlp::new("critic2", f + 2, h, 1, false, rng)];
        let mut targets = critics.clone();
        for (t, name) in targets.iter_mut().zip(["target1", "target2"]) {
            rename(t, name);
        }
        Self {
            encoder,
            actor,
            critics,
            targets,
            encoder_opt: Adam::new(cfg.lr),
            actor_opt: Adam::new(cfg.lr),
            critic_opt: Adam::new(cfg.lr),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }

    /// Policy mean for a batch of encoded features.
    pub fn actor_mean(&self, obs: &[&Observation]) -> Result<Tensor<f32>> {
        let h = self.encoder.infer(&obs_batch(obs))?;
        self.actor.infer(&h)
    }

    /// `μ` when deterministic, otherwise `μ` plus clipped Gaussian noise; always in [−1, 1]².
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, stddev: f64, clip: f64, deterministic: bool, rng: &mut R) -> Result<Action> {
        let mu = self.actor_mean(&[obs])?;
        let mut a = [mu.data[0] as f64, mu.data[1] as f64];
        if !deterministic && stddev > 0.0 {
            for v in &mut a {
                *v += clipped_noise(stddev, clip, rng);
            }
        }
        Ok(a.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn q_values(&self, obs: &[&Observation], actions: &[Action]) -> Result<Vec<f32>> {
        let h = self.encoder.infer(&obs_batch(obs))?;
        let a = action_tensor(actions);
        let x = Tensor::concat_cols(&h, &a)?;
        let q1 = self.critics[0].infer(&x)?;
        let q2 = self.critics[1].infer(&x)?;
        Ok(q1.data.iter().zip(&q2.data).map(|(a, b)| a.min(*b)).collect())
    }

    /// Critic targets for a sampled batch: `R + discount · min(Q̄1, Q̄2)(S′, μ(S′) + ε)`.
    pub fn critic_targets<R: Rng + ?Sized>(&self, next_feat: &Tensor<f32>, batch: &Batch, stddev: f64, clip: f64, rng: &mut R) -> Result<Vec<f32>> {
        let mut a = self.actor.infer(next_feat)?;
        for v in &mut a.data {
            *v = (*v as f64 + clipped_noise(stddev, clip, rng)).clamp(-1.0, 1.0) as f32;
        }
        let x = Tensor::concat_cols(next_feat, &a)?;
        let q1 = self.targets[0].infer(&x)?;
        let q2 = self.targets[1].infer(&x)?;
        Ok(nstep_target(&batch.reward, &batch.discount, &q1.data, &q2.data))
    }

    /// One critic step, one actor step and a soft target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, cfg: &TrainConfig, stddev: f64, rng: &mut R) -> Result<UpdateMetrics> {
        let n = batch.obs.batch();
        let fdim = self.feature_dim();
        let obs = random_shift_batch(&batch.obs, cfg.shift_pad, rng);
        let next = random_shift_batch(&batch.next_obs, cfg.shift_pad, rng);

        // critic
        let next_feat = self.encoder.infer(&next)?;
        let y = self.critic_targets(&next_feat, batch, stddev, cfg.stddev_clip, rng)?;
        self.encoder.zero_grad();
        self.critics.iter_mut().for_each(|c| c.zero_grad());
        let feat = self.encoder.forward(&obs)?;
        let x = Tensor::concat_cols(&feat, &batch.action)?;
        let mut g_feat = Tensor::<f32>::zeros(&[n, fdim]);
        let mut critic_loss = 0.0;
        let mut q_mean = 0.0;
        for critic in self.critics.iter_mut() {
            let q = critic.forward(&x)?;
            let mut gq = Tensor::zeros(&[n, 1]);
            for i in 0..n {
                let d = q.data[i] - y[i];
                critic_loss += (d as f64).powi(2) / n as f64;
                q_mean += q.data[i] as f64 / (2 * n) as f64;
                gq.data[i] = 2.0 * d / n as f32;
            }
            let gx = critic.backward(&gq, true)?.expect("input grad requested");
            let (gf, _) = gx.split_cols(fdim);
            g_feat.data.iter_mut().zip(&gf.data).for_each(|(a, b)| *a += b);
        }
        finite(critic_loss, "critic loss")?;
        self.encoder.backward(&g_feat)?;
        self.encoder_opt.step(self.encoder.params_mut());
        let params: Vec<&mut Param<f32>> = self.critics.iter_mut().flat_map(|c| c.params_mut()).collect();
        self.critic_opt.step(params);

        // actor, on detached features; noise passes straight through the clip
        self.actor.zero_grad();
        let mu = self.actor.forward(&feat)?;
        let mut a = mu.clone();
        for v in &mut a.data {
            *v = (*v as f64 + clipped_noise(stddev, cfg.stddev_clip, rng)).clamp(-1.0, 1.0) as f32;
        }
        let xa = Tensor::concat_cols(&feat, &a)?;
        let q1 = self.critics[0].forward(&xa)?;
        let q2 = self.critics[1].forward(&xa)?;
        let mut g1 = Tensor::zeros(&[n, 1]);
        let mut g2 = Tensor::zeros(&[n, 1]);
        let mut actor_loss = 0.0;
        for i in 0..n {
            let (qa, qb) = (q1.data[i], q2.data[i]);
            actor_loss -= qa.min(qb) as f64 / n as f64;
            if qa <= qb {
                g1.data[i] = -1.0 / n as f32;
            } else {
                g2.data[i] = -1.0 / n as f32;
            }
        }
        finite(actor_loss, "actor loss")?;
        let ga1 = self.critics[0].backward(&g1, true)?.expect("input grad requested");
        let ga2 = self.critics[1].backward(&g2, true)?.expect("input grad requested");
        self.critics.iter_mut().for_each(|c| c.zero_grad());
        let (_, mut ga) = ga1.split_cols(fdim);
        let (_, gb) = ga2.split_cols(fdim);
        ga.data.iter_mut().zip(&gb.data).for_each(|(a, b)| *a += b);
        self.actor.backward(&ga, false)?;
        self.actor_opt.step(self.actor.params_mut());

        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.soft_update_from(c, cfg.tau);
        }
        Ok(UpdateMetrics {
            critic_loss,
            actor_loss,
            q_mean,
            target_mean: y.iter().map(|&v| v as f64).sum::<f64>() / n as f64,
        })
    }

    fn modules(&self) -> Vec<&Param<f32>> {
        let mut v = self.encoder.params();
        v.extend(self.actor.params());
        for m in self.critics.iter().chain(&self.targets) {
            v.extend(m.params());
        }
        v
    }

    fn modules_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.actor.params_mut());
        for m in self.critics.iter_mut().chain(self.targets.iter_mut()) {
            v.extend(m.params_mut());
        }
        v
    }

    /// Network weights as named tensors.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        from_params(&self.modules())
    }

    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        load_params(self.modules_mut(), tensors)
    }

    /// Optimizer moments as named tensors; step counts go in `counts`.
    pub fn optimizer_tensors(&self) -> (Vec<NamedTensor>, [u64; 3]) {
        let mut out = Vec::new();
        for (name, opt) in [("encoder", &self.encoder_opt), ("actor", &self.actor_opt), ("critic", &self.critic_opt)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                out.push(NamedTensor::new(format!("adam.{name}.m{i}"), vec![m.len()], m.clone()));
                out.push(NamedTensor::new(format!("adam.{name}.v{i}"), vec![v.len()], v.clone()));
            }
        }
        (out, [self.encoder_opt.t, self.actor_opt.t, self.critic_opt.t])
    }

    pub fn load_optimizer_tensors(&mut self, tensors: &[NamedTensor], counts: [u64; 3]) -> Result<()> {
        let opts = [("encoder", &mut self.encoder_opt), ("actor", &mut self.actor_opt), ("critic", &mut self.critic_opt)];
        for ((name, opt), t) in opts.into_iter().zip(counts) {
            opt.t = t;
            opt.m.clear();
            opt.v.clear();
            let mut i = 0;
            while let Some(m) = tensors.iter().find(|x| x.name == format!("adam.{name}.m{i}")) {
                let v = tensors
                    .iter()
                    .find(|x| x.name == format!("adam.{name}.v{i}"))
                    .ok_or_else(|| LaueError::Checkpoint(format!("missing adam.{name}.v{i}")))?;
                opt.m.push(m.data.clone());
                opt.v.push(v.data.clone());
                i += 1;
            }
        }
        Ok(())
    }
}

fn rename(m: &mut Mlp<f32>, prefix: &str) {
    for p in m.params_mut() {
        if let Some(rest) = p.name.split_once('.').map(|(_, r)| r.to_string()) {
            p.name = format!("{prefix}.{rest}");
        }
    }
}

fn action_tensor(actions: &[Action]) -> Tensor<f32> {
    Tensor { shape: vec![actions.len(), 2], data: actions.iter().flat_map(|a| [a[0] as f32, a[1] as f32]).collect() }
}

impl Policy for Agent {
    fn act(&self, obs: &Observation, _env: &LaueEnv, rng: &mut ChaCha8Rng) -> Action {
        Agent::act(self, obs, 0.0, 0.0, true, rng).unwrap_or([0.0, 0.0])
    }
}
