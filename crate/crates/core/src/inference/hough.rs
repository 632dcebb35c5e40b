//! Sub-degree refinement from zone lines.
//!
//! Near alignment, the zones containing the target pole project to nearly
//! straight lines through the pole's reflection. The pole is located as the
//! intersection of the strongest Hough lines, and its offset from the detector
//! center is converted to goniometer corrections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LaueError, Result};
use crate::geometry::{align_axis_to_beam, rotation_matrix, CrystalSpec, Mat3, RotationAxis, Vec3};
use crate::render::{render_canvas, Canvas, SPOT_RADIUS_PX};
use crate::simulator::{select_spots, DetectorGeometry, LaueSimulator, WavelengthBand};

pub const ANGLE_BIN_DEG: f64 = 0.5;
pub const DISTANCE_BIN_PX: f64 = 2.0;
pub const PEAK_FRACTION: f64 = 0.6;
/// Lines closer than this in angle are treated as parallel.
const MIN_CROSSING_DEG: f64 = 15.0;
/// Non-maximum suppression half-window, in bins.
const NMS_ANGLE: isize = 6;
const NMS_DISTANCE: isize = 8;

/// Accumulator over (normal angle in [0°, 180°), signed distance from the image center).
#[derive(Clone, Debug, PartialEq)]
pub struct HoughSpace {
    pub angle_bins: usize,
    pub distance_bins: usize,
    pub max_distance: f64,
    pub votes: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    /// Angle of the line normal, degrees.
    pub angle_deg: f64,
    /// Signed distance of the line from the image center, pixels.
    pub distance_px: f64,
    pub votes: u32,
}

impl HoughSpace {
    pub fn new(width: usize, height: usize) -> Self {
        let angle_bins = (180.0 / ANGLE_BIN_DEG).round() as usize;
        let max_distance = (width as f64).hypot(height as f64) / 2.0;
        let distance_bins = (2.0 * max_distance / DISTANCE_BIN_PX).ceil() as usize + 1;
        Self { angle_bins, distance_bins, max_distance, votes: vec![0; angle_bins * distance_bins] }
    }

    pub fn angle_of(&self, bin: usize) -> f64 {
        bin as f64 * ANGLE_BIN_DEG
    }

    pub fn distance_of(&self, bin: usize) -> f64 {
        bin as f64 * DISTANCE_BIN_PX - self.max_distance
    }

    pub fn get(&self, a: usize, d: usize) -> u32 {
        self.votes[a * self.distance_bins + d]
    }

    /// Votes every foreground pixel center into every angle bin.
    pub fn accumulate(canvas: &Canvas) -> Self {
        let mut hs = Self::new(canvas.width, canvas.height);
        let (cx, cy) = (canvas.width as f64 / 2.0, canvas.height as f64 / 2.0);
        let trig: Vec<(f64, f64)> = (0..hs.angle_bins).map(|a| hs.angle_of(a).to_radians().sin_cos()).collect();
        for y in 0..canvas.height {
            for x in 0..canvas.width {
                if canvas.get(x, y) == 0 {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                for (a, &(s, c)) in trig.iter().enumerate() {
                    let rho = px * c + py * s;
                    let d = ((rho + hs.max_distance) / DISTANCE_BIN_PX).round() as usize;
                    hs.votes[a * hs.distance_bins + d] += 1;
                }
            }
        }
        hs
    }

    /// Value at a possibly wrapped angle bin: angle + 180° is the same line with negated distance.
    fn wrapped(&self, a: isize, d: isize) -> u32 {
        let n = self.angle_bins as isize;
        let (a, d) = if a < 0 {
            (a + n, self.distance_bins as isize - 1 - d)
        } else if a >= n {
            (a - n, self.distance_bins as isize - 1 - d)
        } else {
            (a, d)
        };
        if d < 0 || d >= self.distance_bins as isize {
            0
        } else {
            self.get(a as usize, d as usize)
        }
    }

    /// Local maxima at or above `fraction` of the global maximum, strongest first.
    pub fn peaks(&self, fraction: f64) -> Vec<HoughLine> {
        let top = self.votes.iter().copied().max().unwrap_or(0);
        if top == 0 {
            return Vec::new();
        }
        let floor = (fraction * top as f64).ceil() as u32;
        let mut out = Vec::new();
        for a in 0..self.angle_bins as isize {
            for d in 0..self.distance_bins as isize {
                let v = self.get(a as usize, d as usize);
                if v < floor {
                    continue;
                }
                let mut is_max = true;
                'scan: for da in -NMS_ANGLE..=NMS_ANGLE {
                    for dd in -NMS_DISTANCE..=NMS_DISTANCE {
                        if (da, dd) == (0, 0) {
                            continue;
                        }
                        let w = self.wrapped(a + da, d + dd);
                        // ties go to the earlier bin
                        if w > v || (w == v && (da, dd) < (0, 0)) {
                            is_max = false;
                            break 'scan;
                        }
                    }
                }
                if is_max {
                    out.push(self.refine(a, d));
                }
            }
        }
        out.sort_by(|x, y| y.votes.cmp(&x.votes).then(x.angle_deg.total_cmp(&y.angle_deg)));
        out
    }

    /// Vote-weighted centroid around a peak, ignoring bins below half its height.
    fn refine(&self, a: isize, d: isize) -> HoughLine {
        let v = self.get(a as usize, d as usize);
        let (mut wa, mut wd, mut w) = (0.0, 0.0, 0.0);
        for da in -2..=2isize {
            for dd in -4..=4isize {
                let (aa, ddd) = (a + da, d + dd);
                if aa < 0 || aa >= self.angle_bins as isize || ddd < 0 || ddd >= self.distance_bins as isize {
                    continue;
                }
                let x = self.get(aa as usize, ddd as usize) as f64;
                if x * 2.0 < v as f64 {
                    continue;
                }
                wa += x * da as f64;
                wd += x * dd as f64;
                w += x;
            }
        }
        HoughLine {
            angle_deg: (a as f64 + wa / w) * ANGLE_BIN_DEG,
            distance_px: self.distance_of(d as usize) + wd / w * DISTANCE_BIN_PX,
            votes: v,
        }
    }
}

fn intersect(a: &HoughLine, b: &HoughLine) -> Option<(f64, f64)> {
    let (sa, ca) = a.angle_deg.to_radians().sin_cos();
    let (sb, cb) = b.angle_deg.to_radians().sin_cos();
    let det = ca * sb - sa * cb;
    if det.abs() < MIN_CROSSING_DEG.to_radians().sin() {
        return None;
    }
    Some(((a.distance_px * sb - b.distance_px * sa) / det, (ca * b.distance_px - cb * a.distance_px) / det))
}

fn line_residual(l: &HoughLine, p: (f64, f64)) -> f64 {
    let (s, c) = l.angle_deg.to_radians().sin_cos();
    (p.0 * c + p.1 * s - l.distance_px).abs()
}

/// Point supported by the most candidate lines, refined by least squares over them.
pub fn pole_from_lines(lines: &[HoughLine], support_px: f64) -> Result<(f64, f64)> {
    let mut best: Option<(usize, u64, (f64, f64))> = None;
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let Some(p) = intersect(&lines[i], &lines[j]) else { continue };
            let sup: Vec<&HoughLine> = lines.iter().filter(|l| line_residual(l, p) <= support_px).collect();
            let votes: u64 = sup.iter().map(|l| l.votes as u64).sum();
            if best.map(|b| (sup.len(), votes) > (b.0, b.1)).unwrap_or(true) {
                best = Some((sup.len(), votes, p));
            }
        }
    }
    let (_, _, p) = best.ok_or(LaueError::NoLines)?;
    let sup: Vec<&HoughLine> = lines.iter().filter(|l| line_residual(l, p) <= support_px).collect();
    // normal equations for Σ w (x cos + y sin − ρ)²
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for l in &sup {
        let (s, c) = l.angle_deg.to_radians().sin_cos();
        let w = l.votes as f64;
        a11 += w * c * c;
        a12 += w * c * s;
        a22 += w * s * s;
        b1 += w * c * l.distance_px;
        b2 += w * s * l.distance_px;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-9 {
        return Ok(p);
    }
    Ok(((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det))
}

/// Maps a pole offset on the detector to a correction angle:
/// `Δ = −k₁ · atan(p · pixel / (2 L))`, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k1: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { k1: 1.0 }
    }
}

impl Calibration {
    pub fn basis(p_px: f64, det: &DetectorGeometry) -> f64 {
        (p_px * det.pixel_size_cm() / (2.0 * det.distance_cm)).atan().to_degrees()
    }

    pub fn correction(&self, p_px: f64, det: &DetectorGeometry) -> f64 {
        -self.k1 * Self::basis(p_px, det)
    }

    /// Least-squares `k₁` from simulated patterns with known offsets ≤ `max_offset_deg`.
    pub fn fit(spec: &CrystalSpec, det: &DetectorGeometry, band: &WavelengthBand, spot_count: usize, samples: usize, max_offset_deg: f64, seed: u64) -> Result<Self> {
        let sim = LaueSimulator::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..samples {
            let (theta, phi) = (rng.random_range(-max_offset_deg..=max_offset_deg), rng.random_range(-max_offset_deg..=max_offset_deg));
            let base = random_pole_base(spec, &mut rng);
            let canvas = offset_canvas(&sim, &base, theta, phi, det, band, spot_count)?;
            let Ok(fit) = locate_pole(&canvas, det) else { continue };
            // want: −θ = −k₁ · basis(x), −φ = −k₁ · basis(y)
            for (truth, p) in [(theta, fit.pole_px.0), (phi, fit.pole_px.1)] {
                let b = Self::basis(p, det);
                num += truth * b;
                den += b * b;
            }
        }
        if den <= 0.0 {
            return Err(LaueError::NoLines);
        }
        Ok(Self { k1: num / den })
    }
}

/// Orientation with a (001)-family axis on the beam and a random roll.
pub fn random_pole_base<R: Rng + ?Sized>(_spec: &CrystalSpec, rng: &mut R) -> Mat3 {
    rotation_matrix(RotationAxis::Z, rng.random_range(0.0..360.0)) * align_axis_to_beam(&Vec3::z())
}

/// Lab-frame orientation after goniometer offsets `(θ, φ)` from `base`.
pub fn offset_orientation(base: &Mat3, theta: f64, phi: f64) -> Mat3 {
    rotation_matrix(RotationAxis::Y, theta) * rotation_matrix(RotationAxis::X, -phi) * base
}

/// Full-resolution binary pattern with the pinhole masked.
pub fn offset_canvas(
    sim: &LaueSimulator,
    base: &Mat3,
    theta: f64,
    phi: f64,
    det: &DetectorGeometry,
    band: &WavelengthBand,
    spot_count: usize,
) -> Result<Canvas> {
    let m = offset_orientation(base, theta, phi);
    let spots = select_spots(&sim.compute(&m, det, band)?, spot_count);
    let mut c = render_canvas(&spots, det);
    c.mask_pinhole(det.pinhole_frac);
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleFit {
    pub lines: Vec<HoughLine>,
    /// Pole position relative to the detector center, pixels.
    pub pole_px: (f64, f64),
}

pub fn locate_pole(canvas: &Canvas, _det: &DetectorGeometry) -> Result<PoleFit> {
    let hs = HoughSpace::accumulate(canvas);
    let lines = hs.peaks(PEAK_FRACTION);
    let pole_px = pole_from_lines(&lines, 2.0 * SPOT_RADIUS_PX as f64)?;
    Ok(PoleFit { lines, pole_px })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineAlignment {
    pub delta_theta_deg: f64,
    pub delta_phi_deg: f64,
    pub fit: PoleFit,
}

impl FineAlignment {
    pub const CSV_HEADER: &'static str = "peak_angle_deg,peak_distance_px,delta_theta_deg,delta_phi_deg";

    /// Strongest line and the corrections.
    pub fn csv_line(&self) -> String {
        let l = self.fit.lines[0];
        format!("{:.3},{:.3},{:.4},{:.4}", l.angle_deg, l.distance_px, self.delta_theta_deg, self.delta_phi_deg)
    }
}

/// Corrections `(Δθ, Δφ)` that move the pole back to the detector center.
pub fn hough_fine_align(pattern: &Canvas, det: &DetectorGeometry, calib: &Calibration) -> Result<FineAlignment> {
    let fit = locate_pole(pattern, det)?;
    let (x, y) = fit.pole_px;
    Ok(FineAlignment { delta_theta_deg: calib.correction(x, det), delta_phi_deg: calib.correction(y, det), fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::geometry::{angular_distance, beam_axis, target_set, CrystalSystem, TargetMode};

    #[test]
    fn single_line_peak_bin() {
        // line x cos α + y sin α = ρ with α = 30°, ρ = 100 (centered coordinates)
        let mut c = Canvas::new(400, 400);
        let (s, co) = 30f64.to_radians().sin_cos();
        for t in -150..=150 {
            let (x, y) = (100.0 * co - t as f64 * s, 100.0 * s + t as f64 * co);
            c.data[((y + 200.0).floor() as usize) * 400 + (x + 200.0).floor() as usize] = 1;
        }
        let hs = HoughSpace::accumulate(&c);
        let p = hs.peaks(0.6)[0];
        assert!((p.angle_deg - 30.0).abs() <= ANGLE_BIN_DEG, "{p:?}");
        assert!((p.distance_px - 100.0).abs() <= DISTANCE_BIN_PX, "{p:?}");
        let fg = c.count() as u32;
        assert!(hs.votes.iter().all(|&v| v <= fg));
    }

    #[test]
    fn two_lines_intersect() {
        let a = HoughLine { angle_deg: 0.0, distance_px: 12.0, votes: 10 };
        let b = HoughLine { angle_deg: 90.0, distance_px: -7.0, votes: 10 };
        let p = pole_from_lines(&[a, b], 3.0).unwrap();
        assert!((p.0 - 12.0).abs() < 1e-9 && (p.1 + 7.0).abs() < 1e-9);
        assert!(matches!(pole_from_lines(&[a], 3.0), Err(LaueError::NoLines)));
    }

    #[test]
    fn calibration_is_odd() {
        let det = DetectorGeometry::default();
        let c = Calibration { k1: 0.97 };
        for p in [1.0, 17.5, 300.0] {
            assert_eq!(c.correction(-p, &det), -c.correction(p, &det));
        }
    }

    #[test]
    fn empty_pattern_has_no_lines() {
        let det = DetectorGeometry::default();
        let c = Canvas::for_detector(&det);
        assert!(matches!(hough_fine_align(&c, &det, &Calibration::default()), Err(LaueError::NoLines)));
    }

    #[test]
    fn aligned_and_offset_patterns() {
        let cfg = EnvConfig::fixed(CrystalSystem::Cubic);
        let sim = LaueSimulator::new(&cfg.crystal).unwrap();
        let base = align_axis_to_beam(&Vec3::z());
        let calib = Calibration::default();
        let c0 = offset_canvas(&sim, &base, 0.0, 0.0, &cfg.detector, &cfg.band, cfg.spot_count).unwrap();
        let r0 = hough_fine_align(&c0, &cfg.detector, &calib).unwrap();
        assert!(r0.delta_theta_deg.abs() < 0.05 && r0.delta_phi_deg.abs() < 0.05, "{r0:?}");

        let c1 = offset_canvas(&sim, &base, 3.0, -2.0, &cfg.detector, &cfg.band, cfg.spot_count).unwrap();
        let r1 = hough_fine_align(&c1, &cfg.detector, &calib).unwrap();
        assert!((r1.delta_theta_deg + 3.0).abs() < 1.0 && (r1.delta_phi_deg - 2.0).abs() < 1.0, "{r1:?}");
        let targets = target_set(&cfg.crystal, TargetMode::Family001).unwrap();
        let m = offset_orientation(&base, 3.0 + r1.delta_theta_deg, -2.0 + r1.delta_phi_deg);
        assert!(angular_distance(&m, &targets, &beam_axis()) < 1.0);
        assert_eq!(r1.csv_line().split(',').count(), 4);
    }
}
