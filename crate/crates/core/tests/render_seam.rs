use std::collections::HashMap;
use std::time::Instant;

use lauerl::env::EnvConfig;
use lauerl::geometry::{crystal_orientation, initial_orientation, rotation_matrix, CrystalSystem, Mat3, RotationAxis};
use lauerl::render::{render_observation, Observation, OBS_SIZE};
use lauerl::simulator::{select_spots, LaueSimulator};
use nalgebra::{Quaternion, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let v = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    UnitQuaternion::from_quaternion(Quaternion::from(v)).to_rotation_matrix().into_inner()
}

/// Shift `(dx, dy)` maximizing `Σ a(p) b(p + d)` over `|dx|, |dy| ≤ reach`.
fn correlation_peak(a: &Observation, b: &Observation, reach: isize) -> (isize, isize) {
    let n = OBS_SIZE as isize;
    let mut best: (f64, (isize, isize)) = (f64::NEG_INFINITY, (0, 0));
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let mut s = 0.0f64;
            for y in 0.max(-dy)..n.min(n - dy) {
                for x in 0.max(-dx)..n.min(n - dx) {
                    s += a.data[(y * n + x) as usize] as f64 * b.data[((y + dy) * n + x + dx) as usize] as f64;
                }
            }
            // ties go to the smaller shift
            if s > best.0 + 1e-9 || ((s - best.0).abs() <= 1e-9 && dx.abs() + dy.abs() < best.1 .0.abs() + best.1 .1.abs()) {
                best = (s, (dx, dy));
            }
        }
    }
    best.1
}

const STEPS_DEG: [f64; 3] = [1.0, 2.0, 3.0];

#[test]
fn lateral_shift_and_roll() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for system in [CrystalSystem::Cubic, CrystalSystem::Hexagonal, CrystalSystem::Tetragonal] {
        let cfg = EnvConfig::fixed(system);
        let (det, band) = (cfg.detector, cfg.band);
        let sim = LaueSimulator::new(&cfg.crystal).unwrap();
        let (mut shift_ok, mut roll_ok, mut worst_roll) = (0, 0, 0f64);
        let (mut sum_theta, mut sum_phi) = ((0.0, 0.0), (0.0, 0.0));
        for _ in 0..25 {
            let base = random_rotation(&mut rng);
            let omega0 = initial_orientation(rng.random_range(-30.0..30.0), 0.0, rng.random_range(-30.0..30.0));
            let render = |theta: f64, phi: f64| {
                let m = crystal_orientation(&omega0, theta, phi, &base);
                render_observation(&select_spots(&sim.compute(&m, &det, &band).unwrap(), cfg.spot_count), &det)
            };
            // peaks between consecutive steps; one large jump against the reference can alias on sparse patterns
            let track = |at: &dyn Fn(f64) -> Observation| -> Vec<(isize, isize)> {
                let frames: Vec<_> = std::iter::once(0.0).chain(STEPS_DEG).map(at).collect();
                frames.windows(2).map(|w| correlation_peak(&w[0], &w[1], 10)).collect()
            };
            let theta = track(&|d| render(d, 0.0));
            let phi = track(&|d| render(0.0, d));
            // θ moves along +x, φ along +y
            let along = |v: &[(isize, isize)], major: fn(&(isize, isize)) -> isize, minor: fn(&(isize, isize)) -> isize| {
                v.iter().all(|d| major(d) > 0 && major(d) > minor(d).abs())
            };
            if along(&theta, |d| d.0, |d| d.1) && along(&phi, |d| d.1, |d| d.0) {
                shift_ok += 1;
            } else {
                println!("theta {theta:?} phi {phi:?}");
            }
            let total = |v: &[(isize, isize)]| v.iter().fold((0.0, 0.0), |s, d| (s.0 + d.0 as f64, s.1 + d.1 as f64));
            let (lt, lp) = (total(&theta), total(&phi));
            sum_theta = (sum_theta.0 + lt.0, sum_theta.1 + lt.1);
            sum_phi = (sum_phi.0 + lp.0, sum_phi.1 + lp.1);

            // roll about the beam keeps every spot's radius
            let m = crystal_orientation(&omega0, 0.0, 0.0, &base);
            let chi = rng.random_range(-180.0..180.0);
            let radius = |m: &Mat3| -> HashMap<_, f64> {
                sim.compute(m, &det, &band)
                    .unwrap()
                    .iter()
                    .map(|s| (s.hkl, (s.x_px - det.pixels_w as f64 / 2.0).hypot(s.y_px - det.pixels_h as f64 / 2.0)))
                    .collect()
            };
            let r0 = radius(&m);
            let r1 = radius(&(rotation_matrix(RotationAxis::Z, chi) * m));
            let worst = r1.iter().filter_map(|(k, r)| r0.get(k).map(|q| (q - r).abs())).fold(0.0, f64::max);
            worst_roll = worst_roll.max(worst);
            roll_ok += (worst <= 0.5) as usize;
        }
        let cos = (sum_theta.0 * sum_phi.0 + sum_theta.1 * sum_phi.1)
            / (sum_theta.0.hypot(sum_theta.1) * sum_phi.0.hypot(sum_phi.1));
        println!(
            "{system}: lateral shift {shift_ok}/25, roll {roll_ok}/25 (worst {worst_roll:.2e} px), mean-shift cos {cos:.3}"
        );
        assert_eq!(shift_ok, 25);
        assert_eq!(roll_ok, 25);
        assert!(cos.abs() < 0.1);
    }
    assert!(t.elapsed().as_secs() < 120);
}
