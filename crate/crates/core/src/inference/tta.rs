//! Test-time averaging over image symmetries and across independently trained agents.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::env::Action;
use crate::error::{LaueError, Result};
use crate::render::{Observation, OBS_SIZE};

/// Image symmetries of the square detector. Image x follows the θ shift axis
/// and image y the φ axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DihedralTransform {
    Identity,
    MirrorX,
    MirrorY,
    Rotate180,
    Transpose,
    AntiTranspose,
}

impl DihedralTransform {
    pub const ALL: [DihedralTransform; 6] = [
        DihedralTransform::Identity,
        DihedralTransform::MirrorX,
        DihedralTransform::MirrorY,
        DihedralTransform::Rotate180,
        DihedralTransform::Transpose,
        DihedralTransform::AntiTranspose,
    ];

    /// Every member is its own inverse.
    pub fn inverse(self) -> Self {
        self
    }

    /// Source pixel `(x, y)` read for destination `(x, y)` in an `n x n` image.
    fn source(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            DihedralTransform::Identity => (x, y),
            DihedralTransform::MirrorX => (m - x, y),
            DihedralTransform::MirrorY => (x, m - y),
            DihedralTransform::Rotate180 => (m - x, m - y),
            DihedralTransform::Transpose => (y, x),
            DihedralTransform::AntiTranspose => (m - y, m - x),
        }
    }

    pub fn apply_image<T: Copy>(self, src: &[T], n: usize) -> Vec<T> {
        let mut out = src.to_vec();
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = self.source(x, y, n);
                out[y * n + x] = src[sy * n + sx];
            }
        }
        out
    }

    pub fn apply(self, obs: &Observation) -> Observation {
        Observation { data: self.apply_image(&obs.data, OBS_SIZE) }
    }

    /// Maps an action between the original and the transformed frame (an involution).
    pub fn conjugate(self, a: Action) -> Action {
        let [t, p] = a;
        match self {
            DihedralTransform::Identity => [t, p],
            DihedralTransform::MirrorX => [-t, p],
            DihedralTransform::MirrorY => [t, -p],
            DihedralTransform::Rotate180 => [-t, -p],
            DihedralTransform::Transpose => [p, t],
            DihedralTransform::AntiTranspose => [-p, -t],
        }
    }
}

/// Deterministic action source.
pub trait MeanPolicy {
    fn mean_action(&self, obs: &Observation) -> Result<Action>;
}

impl MeanPolicy for Agent {
    fn mean_action(&self, obs: &Observation) -> Result<Action> {
        // the rng is unused for deterministic actions
        self.act(obs, 0.0, 0.0, true, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

fn clip(a: Action) -> Action {
    a.map(|v| v.clamp(-1.0, 1.0))
}

/// Mean over transforms of the back-conjugated action on each transformed view.
pub fn tta_action<P: MeanPolicy + ?Sized>(policy: &P, obs: &Observation, transforms: &[DihedralTransform]) -> Result<Action> {
    if transforms.is_empty() {
        return Err(LaueError::Config("at least one transform is required".into()));
    }
    let mut sum = [0.0; 2];
    for &g in transforms {
        let a = g.inverse().conjugate(policy.mean_action(&g.apply(obs))?);
        sum[0] += a[0];
        sum[1] += a[1];
    }
    let n = transforms.len() as f64;
    Ok(clip([sum[0] / n, sum[1] / n]))
}

/// Mean of the deterministic actions of several policies.
pub fn ensemble_action<P: MeanPolicy>(policies: &[P], obs: &Observation) -> Result<Action> {
    if policies.is_empty() {
        return Err(LaueError::Config("ensemble needs at least one agent".into()));
    }
    let mut sum = [0.0; 2];
    for p in policies {
        let a = p.mean_action(obs)?;
        sum[0] += a[0];
        sum[1] += a[1];
    }
    let n = policies.len() as f64;
    Ok(clip([sum[0] / n, sum[1] / n]))
}

/// Uses [`tta_action`] with all six transforms, or the plain mean when `transforms` is empty.
pub struct TtaPolicy<'a, P: ?Sized> {
    pub inner: &'a P,
    pub transforms: Vec<DihedralTransform>,
}

impl<P: MeanPolicy + Sync + ?Sized> crate::agent::Policy for TtaPolicy<'_, P> {
    fn act(&self, obs: &Observation, _env: &crate::env::LaueEnv, _rng: &mut ChaCha8Rng) -> Action {
        tta_action(self.inner, obs, &self.transforms).unwrap_or([0.0, 0.0])
    }
}

/// Averages an ensemble in the evaluation loop.
pub struct EnsemblePolicy<P> {
    pub members: Vec<P>,
}

impl<P: MeanPolicy + Sync> crate::agent::Policy for EnsemblePolicy<P> {
    fn act(&self, obs: &Observation, _env: &crate::env::LaueEnv, _rng: &mut ChaCha8Rng) -> Action {
        ensemble_action(&self.members, obs).unwrap_or([0.0, 0.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `a = tanh(W · (first moments of the image about the center))`.
    struct MomentPolicy {
        w: [[f64; 2]; 2],
    }

    impl MeanPolicy for MomentPolicy {
        fn mean_action(&self, obs: &Observation) -> Result<Action> {
            let c = (OBS_SIZE as f64 - 1.0) / 2.0;
            let (mut mx, mut my) = (0.0, 0.0);
            for y in 0..OBS_SIZE {
                for x in 0..OBS_SIZE {
                    let v = obs.get(x, y) as f64;
                    mx += v * (x as f64 - c);
                    my += v * (y as f64 - c);
                }
            }
            let s = 1e-3;
            Ok([(s * (self.w[0][0] * mx + self.w[0][1] * my)).tanh(), (s * (self.w[1][0] * mx + self.w[1][1] * my)).tanh()])
        }
    }

    fn obs(seed: usize) -> Observation {
        Observation::from_vec((0..OBS_SIZE * OBS_SIZE).map(|i| ((i * 37 + seed * 101) % 53) as f32 / 53.0).collect()).unwrap()
    }

    #[test]
    fn transforms_are_involutions() {
        let o = obs(1);
        for g in DihedralTransform::ALL {
            assert_eq!(g.inverse().apply(&g.apply(&o)), o);
            let a = [0.3, -0.7];
            assert_eq!(g.inverse().conjugate(g.conjugate(a)), a);
        }
        let distinct: std::collections::HashSet<Vec<u32>> =
            DihedralTransform::ALL.iter().map(|g| g.apply(&o).data.iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn identity_is_plain_act() {
        let p = MomentPolicy { w: [[1.0, 0.5], [-0.2, 1.0]] };
        let o = obs(2);
        assert_eq!(tta_action(&p, &o, &[DihedralTransform::Identity]).unwrap(), p.mean_action(&o).unwrap());
        assert!(tta_action(&p, &o, &[]).is_err());
    }

    #[test]
    fn frame_consistency() {
        let p = MomentPolicy { w: [[1.0, 0.5], [-0.2, 1.0]] };
        let o = obs(3);
        for g in DihedralTransform::ALL {
            let lhs = tta_action(&p, &g.apply(&o), &[g.inverse()]).unwrap();
            assert_eq!(lhs, g.conjugate(p.mean_action(&o).unwrap()));
        }
    }

    #[test]
    fn mirror_invariant_input_cancels_theta() {
        // equivariant policy: θ follows the x moment, φ the y moment
        let p = MomentPolicy { w: [[1.0, 0.0], [0.0, 1.0]] };
        let mut o = obs(4);
        o = Observation {
            data: o.data.iter().zip(DihedralTransform::MirrorX.apply(&o).data).map(|(a, b)| a.max(b)).collect(),
        };
        assert_eq!(DihedralTransform::MirrorX.apply(&o), o);
        let a = tta_action(&p, &o, &[DihedralTransform::Identity, DihedralTransform::MirrorX]).unwrap();
        assert!(a[0].abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let p = MomentPolicy { w: [[0.7, 0.5], [-0.4, 1.1]] };
        let o = obs(5);
        let mut ts = DihedralTransform::ALL.to_vec();
        let a = tta_action(&p, &o, &ts).unwrap();
        ts.reverse();
        let b = tta_action(&p, &o, &ts).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn ensemble_cases() {
        let o = obs(6);
        let p = MomentPolicy { w: [[1.0, 0.3], [0.2, 1.0]] };
        let single = p.mean_action(&o).unwrap();
        assert_eq!(ensemble_action(std::slice::from_ref(&p), &o).unwrap(), single);
        let copies = [MomentPolicy { w: p.w }, MomentPolicy { w: p.w }, MomentPolicy { w: p.w }];
        let e = ensemble_action(&copies, &o).unwrap();
        assert!((e[0] - single[0]).abs() < 1e-12 && (e[1] - single[1]).abs() < 1e-12);
        let neg = MomentPolicy { w: [[-1.0, -0.3], [-0.2, -1.0]] };
        let z = ensemble_action(&[p, neg], &o).unwrap();
        assert!(z[0].abs() < 1e-12 && z[1].abs() < 1e-12);
        assert!(ensemble_action::<MomentPolicy>(&[], &o).is_err());
    }
}
