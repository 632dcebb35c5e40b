//! Dormant-unit ratio and shrink-and-perturb reinitialization.

use rand::Rng;

use super::{Agent, DormantConfig, TrainConfig};
use crate::error::Result;
use crate::nn::{Adam, Module, Tensor};

/// Per-unit mean |activation| for a `[B, units, ...]` tensor.
pub fn unit_activity(act: &Tensor<f32>) -> Vec<f64> {
    let (b, units) = (act.batch(), act.shape[1]);
    let per = act.row_len() / units.max(1);
    let mut out = vec![0.0; units];
    for i in 0..b {
        for (u, chunk) in act.row(i).chunks_exact(per).enumerate() {
            out[u] += chunk.iter().map(|v| v.abs() as f64).sum::<f64>();
        }
    }
    let denom = (b * per).max(1) as f64;
    out.iter_mut().for_each(|v| *v /= denom);
    out
}

/// `(dormant units, total units)` of one layer: a unit is dormant when its
/// activity divided by the layer's mean activity is below `threshold`.
pub fn layer_dormant(activity: &[f64], threshold: f64) -> (usize, usize) {
    let mean = activity.iter().sum::<f64>() / activity.len().max(1) as f64;
    let dormant = activity.iter().filter(|&&a| a / (mean + 1e-9) < threshold).count();
    (dormant, activity.len())
}

/// Pooled dormant fraction over the actor's hidden layers.
pub fn dormant_ratio(agent: &Agent, obs: &Tensor<f32>, threshold: f64) -> Result<f64> {
    let feat = agent.encoder.infer(obs)?;
    let hidden = agent.actor.infer_hidden(&feat)?;
    let (mut d, mut n) = (0, 0);
    for h in &hidden {
        let (a, b) = layer_dormant(&unit_activity(h), threshold);
        d += a;
        n += b;
    }
    Ok(d as f64 / n.max(1) as f64)
}

/// `clamp(1 − rate · ratio, min, max)`.
pub fn perturb_factor(ratio: f64, cfg: &DormantConfig) -> f64 {
    (1.0 - cfg.perturb_rate * ratio).clamp(cfg.min_perturb_factor, cfg.max_perturb_factor)
}

/// `θ ← f θ + (1 − f) θ_fresh` elementwise.
pub fn interpolate<M: Module<f32>>(net: &mut M, fresh: &M, f: f64) {
    let f32f = f as f32;
    for (p, q) in net.params_mut().into_iter().zip(fresh.params()) {
        for (a, &b) in p.value.iter_mut().zip(&q.value) {
            *a = f32f * *a + (1.0 - f32f) * b;
        }
    }
}

/// Measures dormancy and pulls encoder, actor and critics toward a fresh
/// initialization. Optimizer moments of perturbed networks are cleared.
/// Returns `(ratio, factor)`.
pub fn dormant_perturb<R: Rng + ?Sized>(agent: &mut Agent, obs: &Tensor<f32>, cfg: &TrainConfig, rng: &mut R) -> Result<(f64, f64)> {
    let ratio = dormant_ratio(agent, obs, cfg.dormant.threshold)?;
    let f = perturb_factor(ratio, &cfg.dormant);
    if f < 1.0 {
        let fresh = Agent::new(cfg, rng);
        interpolate(&mut agent.encoder, &fresh.encoder, f);
        interpolate(&mut agent.actor, &fresh.actor, f);
        for (c, n) in agent.critics.iter_mut().zip(&fresh.critics) {
            interpolate(c, n, f);
        }
        for opt in [&mut agent.encoder_opt, &mut agent.actor_opt, &mut agent.critic_opt] {
            *opt = Adam::new(opt.lr);
        }
    }
    Ok((ratio, f))
}
