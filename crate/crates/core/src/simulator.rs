//! Back-reflection Laue spot positions for an oriented crystal.
//!
//! Every reciprocal-lattice direction within the index cutoff is handled once,
//! as its primitive vector `G1`; the allowed harmonics `m G1` whose Bragg
//! wavelength falls inside the band are merged into one spot carrying the
//! lowest firing order. Intensity proxy: `Σ_m 1 / (m² |G1|²)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{LaueError, Result};
use crate::geometry::{centering_allows, reciprocal_basis, CrystalSpec, CrystalSystem, Mat3, SpaceGroup, Vec3};

/// Largest |h|, |k|, |l| enumerated.
pub const INDEX_CUTOFF: i32 = 12;

/// Detector placement and raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorGeometry {
    pub distance_cm: f64,
    pub width_cm: f64,
    pub height_cm: f64,
    pub pixels_w: usize,
    pub pixels_h: usize,
    pub pinhole_frac: f64,
}

impl Default for DetectorGeometry {
    fn default() -> Self {
        Self {
            distance_cm: 5.0,
            width_cm: 10.0,
            height_cm: 10.0,
            pixels_w: 1284,
            pixels_h: 1284,
            pinhole_frac: 0.10,
        }
    }
}

impl DetectorGeometry {
    pub fn with_distance(mut self, distance_cm: f64) -> Self {
        self.distance_cm = distance_cm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_cm > 0.0 && self.width_cm > 0.0 && self.height_cm > 0.0) {
            return Err(LaueError::Config(format!("detector dimensions must be positive: {self:?}")));
        }
        if self.pixels_w == 0 || self.pixels_h == 0 {
            return Err(LaueError::Config("detector raster must be nonempty".into()));
        }
        if !(0.0..0.5).contains(&self.pinhole_frac) {
            return Err(LaueError::Config(format!("pinhole fraction {} outside [0, 0.5)", self.pinhole_frac)));
        }
        Ok(())
    }

    /// Edge length of one pixel in cm (x direction).
    pub fn pixel_size_cm(&self) -> f64 {
        self.width_cm / self.pixels_w as f64
    }

    /// Detector-plane coordinates (cm, origin at the beam) to pixel coordinates.
    /// Pixel `i` spans `[i, i + 1)`, so the beam hits `(w/2, h/2)`.
    pub fn to_pixels(&self, x_cm: f64, y_cm: f64) -> (f64, f64) {
        (
            (x_cm / self.width_cm + 0.5) * self.pixels_w as f64,
            (y_cm / self.height_cm + 0.5) * self.pixels_h as f64,
        )
    }

    pub fn to_cm(&self, x_px: f64, y_px: f64) -> (f64, f64) {
        (
            (x_px / self.pixels_w as f64 - 0.5) * self.width_cm,
            (y_px / self.pixels_h as f64 - 0.5) * self.height_cm,
        )
    }

    pub fn contains_px(&self, x_px: f64, y_px: f64) -> bool {
        x_px >= 0.0 && y_px >= 0.0 && x_px < self.pixels_w as f64 && y_px < self.pixels_h as f64
    }
}

/// Wavelength interval of the white beam, in Å.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthBand {
    pub min: f64,
    pub max: f64,
}

impl Default for WavelengthBand {
    fn default() -> Self {
        // 12.398 keV·Å / 50 keV short-wavelength limit
        Self { min: 0.25, max: 2.5 }
    }
}

impl WavelengthBand {
    pub fn validate(&self) -> Result<()> {
        if self.min > 0.0 && self.max > self.min && self.max.is_finite() {
            Ok(())
        } else {
            Err(LaueError::InvalidBand(self.min, self.max))
        }
    }
}

pub type Miller = [i32; 3];

/// A detector spot. Spurious and detected spots carry no indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub x_px: f64,
    pub y_px: f64,
    pub hkl: Option<Miller>,
    pub intensity: f64,
}

#[derive(Clone, Debug)]
struct ReflectionFamily {
    hkl: Miller,
    /// Primitive reciprocal vector in the crystal frame.
    g: Vec3,
    g_norm: f64,
    /// Allowed harmonic orders within the index cutoff, ascending.
    orders: Vec<u8>,
}

fn gcd(mut a: i32, mut b: i32) -> i32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// Precomputed reflection table for one crystal.
#[derive(Clone, Debug)]
pub struct LaueSimulator {
    spec: CrystalSpec,
    families: Vec<ReflectionFamily>,
}

impl LaueSimulator {
    pub fn new(spec: &CrystalSpec) -> Result<Self> {
        Self::with_cutoff(spec, INDEX_CUTOFF)
    }

    pub fn with_cutoff(spec: &CrystalSpec, cutoff: i32) -> Result<Self> {
        spec.validate()?;
        let recip = reciprocal_basis(&spec.lattice)?;
        let centering = spec.space_group.centering();
        let mut families = Vec::new();
        for h in -cutoff..=cutoff {
            for k in -cutoff..=cutoff {
                for l in -cutoff..=cutoff {
                    if (h, k, l) == (0, 0, 0) || gcd(gcd(h, k), l) != 1 {
                        continue;
                    }
                    let top = h.abs().max(k.abs()).max(l.abs());
                    let orders: Vec<u8> = (1..=cutoff / top)
                        .filter(|&m| centering_allows(centering, m * h, m * k, m * l))
                        .map(|m| m as u8)
                        .collect();
                    if orders.is_empty() {
                        continue;
                    }
                    let g = recip * Vec3::new(h as f64, k as f64, l as f64);
                    families.push(ReflectionFamily { hkl: [h, k, l], g, g_norm: g.norm(), orders });
                }
            }
        }
        Ok(Self { spec: *spec, families })
    }

    pub fn spec(&self) -> &CrystalSpec {
        &self.spec
    }

    /// All spots for crystal-to-lab orientation `m`, sorted by descending intensity.
    pub fn compute(&self, m: &Mat3, det: &DetectorGeometry, band: &WavelengthBand) -> Result<Vec<Spot>> {
        band.validate()?;
        det.validate()?;
        let row_z = m.row(2).transpose();
        let mut spots = Vec::new();
        for fam in &self.families {
            // cosine between the plane normal and the reversed beam
            let c = row_z.dot(&fam.g) / fam.g_norm;
            let kz = 2.0 * c * c - 1.0;
            if c <= 0.0 || kz <= 0.0 {
                continue;
            }
            let lambda1 = 4.0 * PI * c / fam.g_norm;
            let mut intensity = 0.0;
            let mut lowest = None;
            for &order in &fam.orders {
                let lambda = lambda1 / order as f64;
                if lambda >= band.min && lambda <= band.max {
                    let mf = order as f64;
                    intensity += 1.0 / (mf * mf * fam.g_norm * fam.g_norm);
                    lowest.get_or_insert(order as i32);
                }
            }
            let Some(order) = lowest else { continue };
            let g_hat = m * fam.g / fam.g_norm;
            let (kx, ky) = (2.0 * c * g_hat.x, 2.0 * c * g_hat.y);
            let x_cm = det.distance_cm * kx / kz;
            let y_cm = det.distance_cm * ky / kz;
            let (x_px, y_px) = det.to_pixels(x_cm, y_cm);
            if !det.contains_px(x_px, y_px) {
                continue;
            }
            let [h, k, l] = fam.hkl;
            spots.push(Spot { x_px, y_px, hkl: Some([order * h, order * k, order * l]), intensity });
        }
        sort_by_intensity(&mut spots);
        Ok(spots)
    }
}

/// One-shot spot computation; builds the reflection table on every call.
pub fn compute_spots(spec: &CrystalSpec, m: &Mat3, det: &DetectorGeometry, band: &WavelengthBand) -> Result<Vec<Spot>> {
    LaueSimulator::new(spec)?.compute(m, det, band)
}

fn spot_order(a: &Spot, b: &Spot) -> Ordering {
    b.intensity
        .partial_cmp(&a.intensity)
        .unwrap_or(Ordering::Equal)
        .then_with(|| match (a.hkl, b.hkl) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
}

fn sort_by_intensity(spots: &mut [Spot]) {
    spots.sort_by(spot_order);
}

/// The `n` most intense spots, ties broken by Miller indices.
pub fn select_spots(spots: &[Spot], n: usize) -> Vec<Spot> {
    let mut sorted = spots.to_vec();
    sort_by_intensity(&mut sorted);
    sorted.truncate(n);
    sorted
}

/// Inclusive numeric range used by the randomization knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Range<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    pub fn fixed(v: T) -> Self {
        Self { min: v, max: v }
    }

    pub fn is_valid(&self) -> bool {
        self.min <= self.max
    }
}

impl Range<f64> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

impl Range<usize> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

/// Domain-randomization ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationConfig {
    pub distance_cm: Range<f64>,
    pub spot_count: Range<usize>,
    /// a (= b) range in Å
    pub lattice_a: Range<f64>,
    /// c range in Å; ignored for cubic cells
    pub lattice_c: Range<f64>,
    pub spot_shift_sigma: f64,
    pub spot_removal_fraction: f64,
    pub spurious_fraction: Range<f64>,
    /// Space groups drawn per episode; empty keeps the configured crystal's group.
    #[serde(default)]
    pub space_groups: Vec<SpaceGroup>,
}

impl RandomizationConfig {
    /// Randomization ranges for a crystal system.
    pub fn preset(system: CrystalSystem) -> Self {
        let (spots, a, c) = match system {
            CrystalSystem::Cubic => (Range::new(30, 60), Range::new(3.0, 15.0), Range::new(3.0, 15.0)),
            CrystalSystem::Hexagonal => (Range::new(40, 90), Range::new(4.0, 7.0), Range::new(8.0, 11.0)),
            CrystalSystem::Tetragonal => (Range::new(60, 120), Range::new(3.0, 6.0), Range::new(12.0, 15.0)),
        };
        Self {
            distance_cm: Range::new(4.0, 6.0),
            spot_count: spots,
            lattice_a: a,
            lattice_c: c,
            spot_shift_sigma: 1.0,
            spot_removal_fraction: 0.25,
            spurious_fraction: Range::new(0.0, 0.1),
            space_groups: Vec::new(),
        }
    }

    /// No randomization at all; perturbation is the identity.
    pub fn disabled(spot_count: usize, distance_cm: f64, a: f64, c: f64) -> Self {
        Self {
            distance_cm: Range::fixed(distance_cm),
            spot_count: Range::fixed(spot_count),
            lattice_a: Range::fixed(a),
            lattice_c: Range::fixed(c),
            spot_shift_sigma: 0.0,
            spot_removal_fraction: 0.0,
            spurious_fraction: Range::fixed(0.0),
            space_groups: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LaueError::Config(format!("randomization: {m}")));
        if !(self.distance_cm.is_valid() && self.distance_cm.min > 0.0) {
            return bad("distance range must be nonempty and positive");
        }
        if !(self.spot_count.is_valid() && self.spot_count.max > 0) {
            return bad("spot-count range must be nonempty");
        }
        if !(self.lattice_a.is_valid() && self.lattice_a.min > 0.0 && self.lattice_c.is_valid() && self.lattice_c.min > 0.0) {
            return bad("lattice ranges must be nonempty and positive");
        }
        if !(self.spot_shift_sigma >= 0.0 && self.spot_shift_sigma.is_finite()) {
            return bad("spot shift sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.spot_removal_fraction) {
            return bad("removal fraction outside [0, 1]");
        }
        let s = self.spurious_fraction;
        if !(s.is_valid() && s.min >= 0.0 && s.max <= 1.0) {
            return bad("spurious fraction range outside [0, 1]");
        }
        Ok(())
    }

    pub fn perturbs(&self) -> bool {
        self.spot_shift_sigma > 0.0 || self.spot_removal_fraction > 0.0 || self.spurious_fraction.max > 0.0
    }
}

/// Detector noise: Gaussian position jitter, random dropout and spurious spots.
///
/// Each spot survives with probability `1 - spot_removal_fraction`; spurious
/// spots number `round(f * len)` with `f` drawn from `spurious_fraction`.
pub fn perturb_spots<R: Rng + ?Sized>(
    spots: &[Spot],
    cfg: &RandomizationConfig,
    det: &DetectorGeometry,
    rng: &mut R,
) -> Vec<Spot> {
    if !cfg.perturbs() {
        return spots.to_vec();
    }
    let jitter = Normal::new(0.0, cfg.spot_shift_sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::with_capacity(spots.len());
    for s in spots {
        let (dx, dy) = if cfg.spot_shift_sigma > 0.0 {
            (jitter.sample(rng), jitter.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let keep = cfg.spot_removal_fraction <= 0.0 || rng.random::<f64>() >= cfg.spot_removal_fraction;
        let moved = Spot { x_px: s.x_px + dx, y_px: s.y_px + dy, ..*s };
        if keep && det.contains_px(moved.x_px, moved.y_px) {
            out.push(moved);
        }
    }
    let frac = cfg.spurious_fraction.sample(rng);
    let extra = (frac * spots.len() as f64).round() as usize;
    let faint = spots.iter().map(|s| s.intensity).fold(f64::INFINITY, f64::min);
    let faint = if faint.is_finite() { faint } else { 1e-9 };
    for _ in 0..extra {
        out.push(Spot {
            x_px: rng.random_range(0.0..det.pixels_w as f64),
            y_px: rng.random_range(0.0..det.pixels_h as f64),
            hkl: None,
            intensity: faint,
        });
    }
    out
}

/// Writes spots as CSV rows `x_px,y_px,h,k,l,intensity` (indices blank when unknown).
pub fn write_spot_csv<W: Write>(mut w: W, spots: &[Spot]) -> std::io::Result<()> {
    writeln!(w, "x_px,y_px,h,k,l,intensity")?;
    for s in spots {
        match s.hkl {
            Some([h, k, l]) => writeln!(w, "{},{},{},{},{},{}", s.x_px, s.y_px, h, k, l, s.intensity)?,
            None => writeln!(w, "{},{},,,,{}", s.x_px, s.y_px, s.intensity)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{align_axis_to_beam, rotation_matrix, LatticeConstants, RotationAxis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cubic() -> CrystalSpec {
        CrystalSpec::preset(SpaceGroup::PrimitiveCubic)
    }

    #[test]
    fn exact_backscatter_hits_detector_center() {
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let det = DetectorGeometry::default();
        let spots = sim.compute(&Mat3::identity(), &det, &WavelengthBand::default()).unwrap();
        let center = spots.iter().find(|s| matches!(s.hkl, Some([0, 0, l]) if l > 0)).expect("(00l) spot");
        assert!((center.x_px - 642.0).abs() < 1e-9 && (center.y_px - 642.0).abs() < 1e-9);
    }

    #[test]
    fn plane_tilted_22_5_degrees_lands_one_distance_off_axis() {
        // normal (sin 22.5°, 0, cos 22.5°) reflects -z into (sin 45°, 0, cos 45°)
        let k_in = Vec3::new(0.0, 0.0, -1.0);
        let n = Vec3::new(22.5f64.to_radians().sin(), 0.0, 22.5f64.to_radians().cos());
        let d = k_in - 2.0 * k_in.dot(&n) * n;
        assert!((d - Vec3::new(45f64.to_radians().sin(), 0.0, 45f64.to_radians().cos())).norm() < 1e-12);
        assert!((5.0 * d.x / d.z - 5.0).abs() < 1e-12);

        // through the simulator; 22.5° would land exactly on the detector edge,
        // so check a 15° tilt (spot at L tan 30°)
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let det = DetectorGeometry::default();
        let m = rotation_matrix(RotationAxis::Y, 15.0);
        let spots = sim.compute(&m, &det, &WavelengthBand::default()).unwrap();
        let s = spots.iter().find(|s| matches!(s.hkl, Some([0, 0, l]) if l > 0)).unwrap();
        let (x_cm, y_cm) = det.to_cm(s.x_px, s.y_px);
        assert!((x_cm - 5.0 * 30f64.to_radians().tan()).abs() < 1e-9 && y_cm.abs() < 1e-9);
    }

    #[test]
    fn fourfold_axis_on_beam_gives_fourfold_pattern() {
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let det = DetectorGeometry::default();
        let band = WavelengthBand::default();
        let m0 = rotation_matrix(RotationAxis::X, 3.0) * rotation_matrix(RotationAxis::Y, -2.0);
        let a = sim.compute(&m0, &det, &band).unwrap();
        let b = sim.compute(&(rotation_matrix(RotationAxis::Z, 90.0) * m0), &det, &band).unwrap();
        // rotate pattern a by +90° about the center: (x, y) -> (-y, x)
        let c = 642.0;
        let mut matched = 0;
        for s in &a {
            let (rx, ry) = (c - (s.y_px - c), c + (s.x_px - c));
            if !det.contains_px(rx, ry) {
                continue;
            }
            let hit = b.iter().any(|t| (t.x_px - rx).hypot(t.y_px - ry) < 0.5);
            assert!(hit, "spot {:?} has no rotated partner", s.hkl);
            matched += 1;
        }
        assert!(matched > 100);
    }

    #[test]
    fn forbidden_reflections_never_appear() {
        let det = DetectorGeometry::default();
        let band = WavelengthBand::default();
        for g in [SpaceGroup::FaceCenteredCubic, SpaceGroup::BodyCenteredCubic, SpaceGroup::BodyCenteredTetragonal] {
            let spec = CrystalSpec::preset(g);
            let sim = LaueSimulator::new(&spec).unwrap();
            let m = align_axis_to_beam(&Vec3::new(0.2, 0.1, 1.0));
            let spots = sim.compute(&m, &det, &band).unwrap();
            assert!(!spots.is_empty());
            for s in spots {
                let [h, k, l] = s.hkl.unwrap();
                assert!(crate::geometry::reflection_allowed(&spec, h, k, l).unwrap());
            }
        }
    }

    #[test]
    fn select_examples() {
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let det = DetectorGeometry::default();
        let m = align_axis_to_beam(&Vec3::new(0.3, 0.2, 1.0));
        let spots = sim.compute(&m, &det, &WavelengthBand::default()).unwrap();
        assert!(select_spots(&spots, 0).is_empty());
        assert_eq!(select_spots(&spots, spots.len() + 5), spots);
        let top = select_spots(&spots, 60);
        assert_eq!(top.len(), 60);
        assert!(top.windows(2).all(|w| w[0].intensity >= w[1].intensity));
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let mk = |hkl: Miller| Spot { x_px: 1.0, y_px: 1.0, hkl: Some(hkl), intensity: 1.0 };
        let spots = vec![mk([1, 0, 0]), mk([-1, 0, 0]), mk([0, 1, 0])];
        let out = select_spots(&spots, 3);
        let order: Vec<_> = out.iter().map(|s| s.hkl.unwrap()).collect();
        assert_eq!(order, vec![[-1, 0, 0], [0, 1, 0], [1, 0, 0]]);
    }

    #[test]
    fn perturb_identity_without_noise() {
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let det = DetectorGeometry::default();
        let spots = sim.compute(&Mat3::identity(), &det, &WavelengthBand::default()).unwrap();
        let cfg = RandomizationConfig::disabled(60, 5.0, 9.0, 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_spots(&spots, &cfg, &det, &mut rng), spots);
    }

    fn centered_spots(n: usize) -> Vec<Spot> {
        (0..n)
            .map(|i| Spot { x_px: 300.0 + 10.0 * i as f64, y_px: 600.0, hkl: Some([i as i32, 0, 1]), intensity: 1.0 })
            .collect()
    }

    #[test]
    fn removal_keeps_three_quarters_on_average() {
        let det = DetectorGeometry::default();
        let mut cfg = RandomizationConfig::disabled(60, 5.0, 9.0, 9.0);
        cfg.spot_removal_fraction = 0.25;
        let spots = centered_spots(60);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 10_000;
        let total: usize = (0..trials).map(|_| perturb_spots(&spots, &cfg, &det, &mut rng).len()).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 45.0).abs() < 1.0, "mean survivors {mean}");
    }

    #[test]
    fn jitter_has_rayleigh_mean() {
        let det = DetectorGeometry::default();
        let mut cfg = RandomizationConfig::disabled(1, 5.0, 9.0, 9.0);
        cfg.spot_shift_sigma = 1.0;
        let spot = [Spot { x_px: 640.0, y_px: 640.0, hkl: Some([0, 0, 1]), intensity: 1.0 }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let p = perturb_spots(&spot, &cfg, &det, &mut rng)[0];
            sum += (p.x_px - 640.0).hypot(p.y_px - 640.0);
        }
        let mean = sum / trials as f64;
        let expect = (PI / 2.0).sqrt();
        assert!((mean / expect - 1.0).abs() < 0.02, "mean displacement {mean}");
    }

    #[test]
    fn spurious_spots_are_added() {
        let det = DetectorGeometry::default();
        let mut cfg = RandomizationConfig::disabled(60, 5.0, 9.0, 9.0);
        cfg.spurious_fraction = Range::fixed(0.1);
        let spots = centered_spots(60);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = perturb_spots(&spots, &cfg, &det, &mut rng);
        assert_eq!(out.len(), 66);
        assert_eq!(out.iter().filter(|s| s.hkl.is_none()).count(), 6);
    }

    #[test]
    fn invalid_band_is_an_error() {
        let sim = LaueSimulator::new(&cubic()).unwrap();
        let band = WavelengthBand { min: 2.0, max: 1.0 };
        assert!(sim.compute(&Mat3::identity(), &DetectorGeometry::default(), &band).is_err());
    }

    #[test]
    fn degenerate_cell_is_an_error() {
        let spec = CrystalSpec {
            space_group: SpaceGroup::PrimitiveCubic,
            lattice: LatticeConstants { a: 1.0, b: 1.0, c: 1.0, alpha: 60.0, beta: 60.0, gamma: 120.0 },
        };
        assert!(LaueSimulator::new(&spec).is_err());
    }

    #[test]
    fn spot_csv_has_header() {
        let mut buf = Vec::new();
        write_spot_csv(&mut buf, &centered_spots(2)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_px,y_px,h,k,l,intensity\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
