//! Four-way orientation classifier used as an end-of-episode trigger.
//!
//! Classes: 0 other, 1 (001), 2 (101), 3 (111), by angular distance of the
//! family's nearest axis to the beam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{LaueError, Result};
use crate::geometry::{
    align_axis_to_beam, axis_angle_deg, beam_axis, rotation_matrix, AxisFamily, CrystalSystem, Mat3, RotationAxis, Vec3,
};
use crate::nn::checkpoint::{from_params, load_params, NamedTensor};
use crate::nn::encoder::FEATURE_DIM;
use crate::nn::{Adam, Encoder, Linear, Module, Param, Tensor};
use crate::render::{render_observation, Observation, OBS_SIZE};
use crate::simulator::{perturb_spots, select_spots, LaueSimulator};

pub const NUM_CLASSES: usize = 4;
pub const CONFIDENCE_THRESHOLD: f64 = 0.9;
const FRAME: usize = OBS_SIZE * OBS_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationClass {
    pub label: usize,
    pub probabilities: [f64; NUM_CLASSES],
}

impl OrientationClass {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.label]
    }

    /// True when a high-symmetry class is predicted with at least `threshold` probability.
    pub fn triggers(&self, threshold: f64) -> bool {
        self.label != 0 && self.confidence() >= threshold
    }
}

/// Family within `tolerance_deg` of the beam, as a class label.
pub fn label_for(m: &Mat3, tolerance_deg: f64) -> usize {
    let beam = beam_axis();
    for fam in AxisFamily::ALL {
        if fam.cubic_axes().iter().any(|v| axis_angle_deg(&(m * v), &beam) <= tolerance_deg) {
            return fam.label();
        }
    }
    0
}

/// How the labelled patterns are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub env: EnvConfig,
    pub tolerance_deg: f64,
    /// Off-target tilts of the near-miss "other" samples reach this angle.
    pub near_miss_max_deg: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { env: EnvConfig::fixed(CrystalSystem::Cubic), tolerance_deg: 5.0, near_miss_max_deg: 15.0 }
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix().into_inner()
}

/// Orientation whose `axis` sits `tilt_deg` off the beam, with random azimuth and roll.
fn tilted<R: Rng + ?Sized>(axis: &Vec3, tilt_deg: f64, rng: &mut R) -> Mat3 {
    let psi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt_axis = nalgebra::Unit::new_normalize(Vec3::new(psi.cos(), psi.sin(), 0.0));
    let tilt = nalgebra::Rotation3::from_axis_angle(&tilt_axis, tilt_deg.to_radians()).into_inner();
    let roll = rotation_matrix(RotationAxis::Z, rng.random_range(0.0..360.0));
    tilt * roll * align_axis_to_beam(axis)
}

/// Balanced draw: classes 1-3 each a quarter (tilt uniform in `[0, tol]`), the
/// rest "other", half uniformly random and half near-misses tilted `(tol, near_max]`.
pub fn sample_orientation<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Mat3 {
    let k = rng.random_range(0..NUM_CLASSES);
    if k == 0 && rng.random_bool(0.5) {
        return random_rotation(rng);
    }
    let fam = if k == 0 { AxisFamily::ALL[rng.random_range(0..3)] } else { AxisFamily::ALL[k - 1] };
    let axes = fam.cubic_axes();
    let axis = axes[rng.random_range(0..axes.len())];
    let tilt = if k == 0 {
        spec.tolerance_deg + rng.random::<f64>() * (spec.near_miss_max_deg - spec.tolerance_deg)
    } else {
        rng.random::<f64>() * spec.tolerance_deg
    };
    tilted(&axis, tilt, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Observations quantized to 8 bits, `len x 84 x 84`.
    pub frames: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation::from_u8(&self.frames[i * FRAME..(i + 1) * FRAME]).expect("frame size")
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        self.labels.iter().for_each(|&l| c[l as usize] += 1);
        c
    }

    fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * FRAME);
        for &i in idx {
            data.extend(self.frames[i * FRAME..(i + 1) * FRAME].iter().map(|&b| b as f32 / 255.0));
        }
        (Tensor { shape: vec![idx.len(), 1, OBS_SIZE, OBS_SIZE], data }, idx.iter().map(|&i| self.labels[i] as usize).collect())
    }

    /// Simulates `n` labelled patterns; sample `i` depends only on `(seed, i)`.
    pub fn generate(spec: &DatasetSpec, n: usize, seed: u64, threads: usize) -> Result<Self> {
        spec.env.validate()?;
        if spec.env.crystal.system() != CrystalSystem::Cubic {
            return Err(LaueError::Config("classifier datasets are cubic".into()));
        }
        let sim = LaueSimulator::new(&spec.env.crystal)?;
        let one = |i: usize| -> Result<(Vec<u8>, u8)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let m = sample_orientation(spec, &mut rng);
            let cfg = &spec.env;
            let spots = select_spots(&sim.compute(&m, &cfg.detector, &cfg.band)?, cfg.spot_count);
            let spots = match &cfg.randomization {
                Some(r) => perturb_spots(&spots, r, &cfg.detector, &mut rng),
                None => spots,
            };
            Ok((render_observation(&spots, &cfg.detector).to_u8(), label_for(&m, spec.tolerance_deg) as u8))
        };
        let threads = threads.clamp(1, n.max(1));
        let chunk = n.div_ceil(threads).max(1);
        let mut parts: Vec<Result<Vec<(Vec<u8>, u8)>>> = Vec::new();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let one = &one;
                    s.spawn(move || (start..(start + chunk).min(n)).map(one).collect::<Result<Vec<_>>>())
                })
                .collect();
            parts = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        });
        let mut out = Dataset { frames: Vec::with_capacity(n * FRAME), labels: Vec::with_capacity(n) };
        for part in parts {
            for (f, l) in part? {
                out.frames.extend_from_slice(&f);
                out.labels.push(l);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub folds: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, lr: 3e-4, folds: 5 }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub encoder: Encoder<f32>,
    pub head: Linear<f32>,
    opt_encoder: Adam<f32>,
    opt_head: Adam<f32>,
}

/// Mean loss, accuracy and confusion matrix (`[truth][predicted]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl Scores {
    /// Every row's largest entry sits on the diagonal.
    pub fn diagonal_dominant(&self) -> bool {
        self.confusion.iter().enumerate().all(|(i, row)| {
            let total: usize = row.iter().sum();
            total == 0 || row.iter().enumerate().all(|(j, &v)| j == i || v < row[i])
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

fn softmax(logits: &[f32]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    std::array::from_fn(|i| e[i] / s)
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(lr: f64, rng: &mut R) -> Self {
        Self {
            encoder: Encoder::with_input("clf.encoder", 1, FEATURE_DIM, rng),
            head: Linear::new("clf.head", FEATURE_DIM, NUM_CLASSES, 1.0, rng),
            opt_encoder: Adam::new(lr),
            opt_head: Adam::new(lr),
        }
    }

    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.head.infer(&self.encoder.infer(x)?)
    }

    pub fn classify_batch(&self, obs: &[&Observation]) -> Result<Vec<OrientationClass>> {
        let mut data = Vec::with_capacity(obs.len() * FRAME);
        obs.iter().for_each(|o| data.extend_from_slice(o.as_slice()));
        let logits = self.logits(&Tensor { shape: vec![obs.len(), 1, OBS_SIZE, OBS_SIZE], data })?;
        Ok((0..obs.len())
            .map(|i| {
                let p = softmax(logits.row(i));
                OrientationClass { label: argmax(&p), probabilities: p }
            })
            .collect())
    }

    pub fn classify(&self, obs: &Observation) -> Result<OrientationClass> {
        Ok(self.classify_batch(&[obs])?.remove(0))
    }

    /// One Adam step on softmax cross-entropy; returns the batch loss.
    pub fn train_batch(&mut self, x: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
        let n = labels.len();
        self.encoder.zero_grad();
        self.head.zero_grad();
        let feat = self.encoder.forward(x)?;
        let logits = self.head.forward(&feat)?;
        let mut g = Tensor::zeros(&[n, NUM_CLASSES]);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = softmax(logits.row(i));
            loss -= p[y].max(1e-12).ln() / n as f64;
            for c in 0..NUM_CLASSES {
                g.data[i * NUM_CLASSES + c] = ((p[c] - (c == y) as u8 as f64) / n as f64) as f32;
            }
        }
        if !loss.is_finite() {
            return Err(LaueError::NonFinite("classifier loss"));
        }
        let gf = self.head.backward(&g, true)?.expect("input grad requested");
        self.encoder.backward(&gf)?;
        self.opt_encoder.step(self.encoder.params_mut());
        self.opt_head.step(self.head.params_mut());
        Ok(loss)
    }

    pub fn score(&self, data: &Dataset, idx: &[usize]) -> Result<Scores> {
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        let mut loss = 0.0;
        for chunk in idx.chunks(128) {
            let (x, y) = data.batch(chunk);
            let logits = self.logits(&x)?;
            for (i, &t) in y.iter().enumerate() {
                let p = softmax(logits.row(i));
                loss -= p[t].max(1e-12).ln();
                confusion[t][argmax(&p)] += 1;
            }
        }
        let n = idx.len().max(1) as f64;
        let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
        Ok(Scores { loss: loss / n, accuracy: correct as f64 / n, confusion })
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        from_params(&p)
    }

    pub fn load_tensors(&mut self, t: &[NamedTensor]) -> Result<()> {
        let mut p: Vec<&mut Param<f32>> = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        load_params(p, t)
    }
}

fn train_on<R: Rng + ?Sized>(
    clf: &mut Classifier,
    data: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &ClassifierConfig,
    rng: &mut R,
) -> Result<FoldCurve> {
    let mut curve = FoldCurve { train_loss: Vec::new(), val_loss: Vec::new(), val_accuracy: Vec::new() };
    let mut order = train.to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            total += clf.train_batch(&x, &y)? * chunk.len() as f64;
        }
        curve.train_loss.push(total / order.len().max(1) as f64);
        if !val.is_empty() {
            let s = clf.score(data, val)?;
            log::info!("epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.4}", curve.train_loss[epoch], s.loss, s.accuracy);
            curve.val_loss.push(s.loss);
            curve.val_accuracy.push(s.accuracy);
        }
    }
    Ok(curve)
}

/// K-fold cross-validation. Returns the fold model with the lowest final
/// validation loss and every fold's curves.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<(Classifier, Vec<FoldCurve>)> {
    for (c, &n) in data.class_counts().iter().enumerate() {
        if n == 0 {
            return Err(LaueError::MissingClass(c));
        }
    }
    if cfg.folds < 2 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(LaueError::Config("classifier needs folds >= 2, batch_size > 0 and lr > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let mut best: Option<(f64, Classifier)> = None;
    let mut curves = Vec::with_capacity(cfg.folds);
    for k in 0..cfg.folds {
        let (lo, hi) = (k * idx.len() / cfg.folds, (k + 1) * idx.len() / cfg.folds);
        let val = &idx[lo..hi];
        let train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        let mut clf = Classifier::new(cfg.lr, &mut rng);
        let curve = train_on(&mut clf, data, &train, val, cfg, &mut rng)?;
        let last = curve.val_loss.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().map(|b| last < b.0).unwrap_or(true) {
            best = Some((last, clf));
        }
        curves.push(curve);
    }
    Ok((best.expect("at least two folds").1, curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rule_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a111 = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert_eq!(label_for(&tilted(&a111, 3.0, &mut rng), 5.0), 3);
        assert_eq!(label_for(&tilted(&Vec3::z(), 0.0, &mut rng), 5.0), 1);
        assert_eq!(label_for(&tilted(&Vec3::new(1.0, 0.0, 1.0), 4.9, &mut rng), 5.0), 2);
        // 10 degrees off (001) along a plane that stays far from every other axis
        let m = rotation_matrix(RotationAxis::Y, 10.0);
        assert_eq!(label_for(&m, 5.0), 0);
    }

    #[test]
    fn tilt_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = rng.random_range(0.0..15.0);
            let v = Vec3::new(1.0, 0.0, 1.0).normalize();
            let m = tilted(&v, t, &mut rng);
            assert!((axis_angle_deg(&(m * v), &beam_axis()) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -2.0, 30.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|&v| v >= 0.0));
        assert_eq!(argmax(&p), 2);
    }

    #[test]
    fn generation_is_balanced_and_reproducible() {
        let spec = DatasetSpec::default();
        let a = Dataset::generate(&spec, 200, 5, 2).unwrap();
        assert_eq!(a, Dataset::generate(&spec, 200, 5, 1).unwrap());
        let c = a.class_counts();
        assert!(c.iter().all(|&n| (25..=80).contains(&n)), "{c:?}");
    }

    #[test]
    fn missing_class_is_an_error() {
        let d = Dataset { frames: vec![0; 2 * FRAME], labels: vec![0, 1] };
        assert!(matches!(train_classifier(&d, &ClassifierConfig::default(), 0), Err(LaueError::MissingClass(2))));
    }

    #[test]
    fn memorizes_four_patterns() {
        let spec = DatasetSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sim = LaueSimulator::new(&spec.env.crystal).unwrap();
        let mut d = Dataset { frames: Vec::new(), labels: Vec::new() };
        for (label, axis) in [(0u8, Vec3::new(1.0, 2.0, 3.0)), (1, Vec3::z()), (2, Vec3::new(1.0, 0.0, 1.0)), (3, Vec3::new(1.0, 1.0, 1.0))] {
            let m = tilted(&axis, 0.0, &mut rng);
            let spots = select_spots(&sim.compute(&m, &spec.env.detector, &spec.env.band).unwrap(), 60);
            d.frames.extend(render_observation(&spots, &spec.env.detector).to_u8());
            d.labels.push(label);
        }
        let mut clf = Classifier::new(1e-3, &mut rng);
        let idx: Vec<usize> = (0..4).collect();
        let (x, y) = d.batch(&idx);
        for _ in 0..40 {
            clf.train_batch(&x, &y).unwrap();
        }
        let s = clf.score(&d, &idx).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert!(s.diagonal_dominant());
        let c = clf.classify(&d.observation(3)).unwrap();
        assert_eq!(c, clf.classify(&d.observation(3)).unwrap());
        assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
