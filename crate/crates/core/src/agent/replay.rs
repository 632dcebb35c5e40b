//! Frame-sequential replay ring with n-step sampling.
//!
//! Slot `i` holds observation `S_i`; if an action was taken from it, also `A_i`,
//! the reward that followed and whether that step reached the goal. The last
//! frame of every episode carries no action, so n-step windows stop there.

use rand::Rng;
use std::io::{Read, Write};

use crate::error::{LaueError, Result};
use crate::nn::Tensor;
use crate::render::{Observation, OBS_SIZE};

const FRAME: usize = OBS_SIZE * OBS_SIZE;
const MAGIC: &[u8; 8] = b"LAUERLRB";

#[derive(Clone, Debug, Default, PartialEq)]
struct SlotMeta {
    action: [f32; 2],
    reward: f32,
    has_action: bool,
    terminated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    frames: Vec<u8>,
    meta: Vec<SlotMeta>,
    /// Next physical slot to write.
    head: usize,
    len: usize,
}

/// n-step training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Tensor<f32>,
    pub action: Tensor<f32>,
    /// Σ_{i<k} γ^i R_{t+i+1}
    pub reward: Vec<f32>,
    /// γ^k, or 0 when the window ended in success
    pub discount: Vec<f32>,
    pub next_obs: Tensor<f32>,
    pub indices: Vec<usize>,
}

/// Discounted return of a reward window and the bootstrap discount.
///
/// `terminal` marks that the last reward ended the episode successfully.
pub fn nstep_return(rewards: &[f64], gamma: f64, terminal: bool) -> (f64, f64) {
    let mut sum = 0.0;
    let mut g = 1.0;
    for r in rewards {
        sum += g * r;
        g *= gamma;
    }
    (sum, if terminal { 0.0 } else { g })
}

/// `y = R + discount * min(Q̄1, Q̄2)`.
pub fn nstep_target(reward: &[f32], discount: &[f32], q1: &[f32], q2: &[f32]) -> Vec<f32> {
    reward
        .iter()
        .zip(discount)
        .zip(q1.iter().zip(q2))
        .map(|((&r, &d), (&a, &b))| r + d * a.min(b))
        .collect()
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        Self { capacity, frames: vec![0; capacity * FRAME], meta: vec![SlotMeta::default(); capacity], head: 0, len: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Transitions currently stored.
    pub fn transitions(&self) -> usize {
        (0..self.len).filter(|&j| self.meta[self.phys(j)].has_action).count()
    }

    fn phys(&self, logical: usize) -> usize {
        (self.head + self.capacity - self.len + logical) % self.capacity
    }

    /// Stores the first observation of an episode.
    pub fn push_first(&mut self, obs: &Observation) {
        let slot = self.head;
        self.frames[slot * FRAME..(slot + 1) * FRAME].copy_from_slice(&obs.to_u8());
        self.meta[slot] = SlotMeta::default();
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Records the action taken from the latest frame, its outcome and the next frame.
    pub fn push(&mut self, action: [f64; 2], reward: f64, next_obs: &Observation, terminated: bool) {
        let last = (self.head + self.capacity - 1) % self.capacity;
        self.meta[last] = SlotMeta {
            action: [action[0] as f32, action[1] as f32],
            reward: reward as f32,
            has_action: true,
            terminated,
        };
        self.push_first(next_obs);
    }

    fn frame(&self, phys: usize) -> &[u8] {
        &self.frames[phys * FRAME..(phys + 1) * FRAME]
    }

    pub fn observation(&self, logical: usize) -> Observation {
        Observation::from_u8(self.frame(self.phys(logical))).expect("frame size")
    }

    /// Window `(rewards, terminal, frames ahead)` starting at logical index `j`,
    /// or `None` if `j` has no action or its window is not fully stored yet.
    fn window(&self, j: usize, n: usize) -> Option<(Vec<f32>, bool, usize)> {
        let mut rewards = Vec::with_capacity(n);
        let mut k = 0;
        while k < n {
            let idx = j + k;
            if idx + 1 >= self.len {
                return None;
            }
            let m = &self.meta[self.phys(idx)];
            if !m.has_action {
                break;
            }
            rewards.push(m.reward);
            k += 1;
            if m.terminated {
                return Some((rewards, true, k));
            }
        }
        (k > 0).then_some((rewards, false, k))
    }

    /// Uniform sample over stored transitions whose n-step window is complete.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, n: usize, gamma: f64, rng: &mut R) -> Result<Batch> {
        // draws are with replacement, so one transition is enough
        let have = self.transitions();
        if have == 0 {
            return Err(LaueError::BufferUnderfull { have, need: 1 });
        }
        let mut obs = Vec::with_capacity(batch * FRAME);
        let mut next = Vec::with_capacity(batch * FRAME);
        let mut action = Vec::with_capacity(batch * 2);
        let mut reward = Vec::with_capacity(batch);
        let mut discount = Vec::with_capacity(batch);
        let mut indices = Vec::with_capacity(batch);
        let mut attempts = 0usize;
        while indices.len() < batch {
            attempts += 1;
            if attempts > 1000 * batch + 10_000 {
                return Err(LaueError::BufferUnderfull { have: indices.len(), need: batch });
            }
            let j = rng.random_range(0..self.len);
            let Some((rs, terminal, k)) = self.window(j, n) else { continue };
            let rs64: Vec<f64> = rs.iter().map(|&r| r as f64).collect();
            let (ret, disc) = nstep_return(&rs64, gamma, terminal);
            let p = self.phys(j);
            obs.extend(self.frame(p).iter().map(|&b| b as f32 / 255.0));
            next.extend(self.frame(self.phys(j + k)).iter().map(|&b| b as f32 / 255.0));
            action.extend_from_slice(&self.meta[p].action);
            reward.push(ret as f32);
            discount.push(disc as f32);
            indices.push(j);
        }
        Ok(Batch {
            obs: Tensor { shape: vec![batch, 1, OBS_SIZE, OBS_SIZE], data: obs },
            action: Tensor { shape: vec![batch, 2], data: action },
            reward,
            discount,
            next_obs: Tensor { shape: vec![batch, 1, OBS_SIZE, OBS_SIZE], data: next },
            indices,
        })
    }

    /// Observations only, for activation statistics.
    pub fn sample_observations<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Tensor<f32>> {
        if self.len == 0 {
            return Err(LaueError::BufferUnderfull { have: 0, need: batch });
        }
        let mut data = Vec::with_capacity(batch * FRAME);
        for _ in 0..batch {
            let p = self.phys(rng.random_range(0..self.len));
            data.extend(self.frame(p).iter().map(|&b| b as f32 / 255.0));
        }
        Ok(Tensor { shape: vec![batch, 1, OBS_SIZE, OBS_SIZE], data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.capacity, self.head, self.len] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for m in &self.meta {
            w.write_all(&m.action[0].to_le_bytes())?;
            w.write_all(&m.action[1].to_le_bytes())?;
            w.write_all(&m.reward.to_le_bytes())?;
            w.write_all(&[m.has_action as u8, m.terminated as u8])?;
        }
        w.write_all(&self.frames)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |offset: usize, reason: &str| LaueError::Format { format: "replay", offset, reason: reason.into() };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt(0, "truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt(0, "bad magic"));
        }
        let mut u = [0u8; 8];
        let mut nums = [0usize; 3];
        for (i, n) in nums.iter_mut().enumerate() {
            r.read_exact(&mut u).map_err(|_| fmt(8 + 8 * i, "truncated header"))?;
            *n = u64::from_le_bytes(u) as usize;
        }
        let [capacity, head, len] = nums;
        if capacity < 2 || head >= capacity || len > capacity {
            return Err(fmt(8, "inconsistent header"));
        }
        let mut meta = Vec::with_capacity(capacity);
        let mut rec = [0u8; 14];
        for i in 0..capacity {
            r.read_exact(&mut rec).map_err(|_| fmt(32 + 14 * i, "truncated metadata"))?;
            let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
            meta.push(SlotMeta { action: [f(0), f(4)], reward: f(8), has_action: rec[12] != 0, terminated: rec[13] != 0 });
        }
        let mut frames = vec![0u8; capacity * FRAME];
        r.read_exact(&mut frames).map_err(|_| fmt(32 + 14 * capacity, "truncated frames"))?;
        Ok(Self { capacity, frames, meta, head, len })
    }
}
