//! Spot list -> binary canvas -> 84x84 agent observation.

use serde::{Deserialize, Serialize};

use crate::error::{LaueError, Result};
use crate::simulator::{DetectorGeometry, Spot};

pub const OBS_SIZE: usize = 84;
pub const SPOT_RADIUS_PX: usize = 10;
pub const BLUR_SIGMA: f64 = 1.0;

/// Full-resolution binary detector image, row-major, 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn for_detector(det: &DetectorGeometry) -> Self {
        Self::new(det.pixels_w, det.pixels_h)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Stamps a filled disc centered on pixel `(cx, cy)`.
    pub fn stamp_disc(&mut self, cx: usize, cy: usize, radius: usize) {
        let r = radius as isize;
        let r2 = r * r;
        for dy in -r..=r {
            let y = cy as isize + dy;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            let half = ((r2 - dy * dy) as f64).sqrt() as isize;
            let x0 = (cx as isize - half).max(0) as usize;
            let x1 = (cx as isize + half).min(self.width as isize - 1);
            if x1 < x0 as isize {
                continue;
            }
            let row = y as usize * self.width;
            self.data[row + x0..=row + x1 as usize].fill(1);
        }
    }

    /// Stamps every spot inside the canvas; spots outside are discarded.
    pub fn stamp_spots(&mut self, spots: &[Spot], radius: usize) {
        for s in spots {
            if let Some((cx, cy)) = spot_pixel(s, self.width, self.height) {
                self.stamp_disc(cx, cy, radius);
            }
        }
    }

    /// Clears the central pinhole disc (radius `frac * width`).
    pub fn mask_pinhole(&mut self, frac: f64) {
        let (w, h) = (self.width, self.height);
        for_each_in_pinhole(w, h, frac, |x, y| self.data[y * w + x] = 0);
    }
}

/// Pixel whose area contains the spot center.
pub fn spot_pixel(s: &Spot, width: usize, height: usize) -> Option<(usize, usize)> {
    if !(s.x_px >= 0.0 && s.y_px >= 0.0) {
        return None;
    }
    let (cx, cy) = (s.x_px.floor() as usize, s.y_px.floor() as usize);
    (cx < width && cy < height).then_some((cx, cy))
}

fn for_each_in_pinhole(w: usize, h: usize, frac: f64, mut f: impl FnMut(usize, usize)) {
    let r = frac * w.min(h) as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy < r * r {
                f(x, y);
            }
        }
    }
}

/// Agent input: an 84x84 grid of values in [0, 1], row-major (y, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub data: Vec<f32>,
}

impl Default for Observation {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Observation {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; OBS_SIZE * OBS_SIZE] }
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != OBS_SIZE * OBS_SIZE {
            return Err(LaueError::Shape { expected: vec![OBS_SIZE, OBS_SIZE], got: vec![data.len()] });
        }
        Ok(Self { data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * OBS_SIZE + x]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Quantizes to 8 bits (value * 255, rounded).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(bytes: &[u8]) -> Result<Self> {
        Self::from_vec(bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Area-weighted box-filter resampling of a `w x h` binary image to `out x out`.
pub fn downsample_box(canvas: &Canvas, out: usize) -> Vec<f32> {
    let wx = box_weights(canvas.width, out);
    let wy = box_weights(canvas.height, out);
    // collapse columns first, skipping empty rows
    let mut rows = vec![0f64; canvas.height * out];
    for y in 0..canvas.height {
        let src = &canvas.data[y * canvas.width..(y + 1) * canvas.width];
        if src.iter().all(|&v| v == 0) {
            continue;
        }
        let dst = &mut rows[y * out..(y + 1) * out];
        for (x, &v) in src.iter().enumerate() {
            if v != 0 {
                for &(j, wgt) in &wx[x] {
                    dst[j] += wgt * v as f64;
                }
            }
        }
    }
    let mut res = vec![0f64; out * out];
    for y in 0..canvas.height {
        let src = &rows[y * out..(y + 1) * out];
        for &(j, wgt) in &wy[y] {
            let dst = &mut res[j * out..(j + 1) * out];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wgt * s;
            }
        }
    }
    res.into_iter().map(|v| v as f32).collect()
}

/// For each source index, the (output index, weight) pairs it overlaps. Weights
/// for one output cell sum to 1.
fn box_weights(n: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out as f64 / n as f64;
    (0..n)
        .map(|i| {
            let a = i as f64 * scale;
            let b = (i + 1) as f64 * scale;
            let mut v = Vec::with_capacity(2);
            let mut j = a.floor() as usize;
            while (j as f64) < b && j < out {
                let lo = a.max(j as f64);
                let hi = b.min((j + 1) as f64);
                if hi > lo {
                    v.push((j, hi - lo));
                }
                j += 1;
            }
            v
        })
        .collect()
}

/// Normalized 1-D Gaussian kernel truncated at `truncate * sigma`.
pub fn gaussian_kernel(sigma: f64, truncate: f64) -> Vec<f64> {
    let radius = (truncate * sigma + 0.5) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Symmetric ("reflect") boundary index: d c b a | a b c d | d c b a.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflect boundaries, truncated at 4 sigma.
pub fn gaussian_blur(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma, 4.0);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect_index(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f64; w * h];
    for y in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Downsample, blur, mask the pinhole and clip.
pub fn observation_from_canvas(canvas: &Canvas, pinhole_frac: f64) -> Observation {
    let small: Vec<f64> = downsample_box(canvas, OBS_SIZE).into_iter().map(f64::from).collect();
    let blurred = gaussian_blur(&small, OBS_SIZE, OBS_SIZE, BLUR_SIGMA);
    let mut data: Vec<f32> = blurred.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    for_each_in_pinhole(OBS_SIZE, OBS_SIZE, pinhole_frac, |x, y| data[y * OBS_SIZE + x] = 0.0);
    Observation { data }
}

pub fn render_canvas(spots: &[Spot], det: &DetectorGeometry) -> Canvas {
    let mut c = Canvas::for_detector(det);
    c.stamp_spots(spots, SPOT_RADIUS_PX);
    c
}

pub fn render_observation(spots: &[Spot], det: &DetectorGeometry) -> Observation {
    observation_from_canvas(&render_canvas(spots, det), det.pinhole_frac)
}

/// True where an observation pixel lies inside the pinhole disc.
pub fn pinhole_mask(frac: f64) -> Vec<bool> {
    let mut m = vec![false; OBS_SIZE * OBS_SIZE];
    for_each_in_pinhole(OBS_SIZE, OBS_SIZE, frac, |x, y| m[y * OBS_SIZE + x] = true);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det() -> DetectorGeometry {
        DetectorGeometry::default()
    }

    fn spot(x: f64, y: f64) -> Spot {
        Spot { x_px: x, y_px: y, hkl: None, intensity: 1.0 }
    }

    #[test]
    fn no_spots_renders_zero() {
        assert!(render_observation(&[], &det()).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_spot_is_swallowed_by_pinhole() {
        let obs = render_observation(&[spot(642.0, 642.0)], &det());
        assert!(obs.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_canvas_downsamples_to_one() {
        let mut c = Canvas::new(1284, 1284);
        c.data.fill(1);
        let small = downsample_box(&c, OBS_SIZE);
        assert!(small.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let obs = observation_from_canvas(&c, 0.1);
        let mask = pinhole_mask(0.1);
        for (v, m) in obs.data.iter().zip(&mask) {
            if *m {
                assert_eq!(*v, 0.0);
            } else {
                assert!((v - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn box_weights_partition_unity() {
        for (n, out) in [(1284, 84), (100, 84), (84, 84), (50, 7)] {
            let w = box_weights(n, out);
            let mut per_out = vec![0.0; out];
            for row in &w {
                for &(j, v) in row {
                    per_out[j] += v;
                }
            }
            assert!(per_out.iter().all(|s| (s - 1.0).abs() < 1e-12), "{n}->{out}: {per_out:?}");
        }
    }

    #[test]
    fn downsample_oracle_on_random_canvas() {
        // brute force: output cell integrates the canvas over its footprint
        let (n, out) = (30, 7);
        let mut c = Canvas::new(n, n);
        for (i, v) in c.data.iter_mut().enumerate() {
            *v = ((i * 7919) % 5 == 0) as u8;
        }
        let fast = downsample_box(&c, out);
        let s = n as f64 / out as f64;
        let overlap = |i: usize, j: usize| -> f64 {
            let (a, b) = (j as f64 * s, (j + 1) as f64 * s);
            ((i + 1) as f64).min(b) - (i as f64).max(a)
        };
        for jy in 0..out {
            for jx in 0..out {
                let mut acc = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        let (ox, oy) = (overlap(x, jx), overlap(y, jy));
                        if ox > 0.0 && oy > 0.0 {
                            acc += ox * oy * c.get(x, y) as f64;
                        }
                    }
                }
                acc /= s * s;
                assert!((fast[jy * out + jx] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reflect_matches_symmetric_extension() {
        let n = 4;
        let got: Vec<usize> = (-5..9).map(|i| reflect_index(i, n)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let img = vec![0.5; 20 * 20];
        assert!(gaussian_blur(&img, 20, 20, 1.0).iter().all(|v| (v - 0.5).abs() < 1e-12));
        let mut delta = vec![0.0; 41 * 41];
        delta[20 * 41 + 20] = 1.0;
        let b = gaussian_blur(&delta, 41, 41, 1.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b[20 * 41 + 21] / b[20 * 41 + 20] - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn disc_area_is_close_to_pi_r2() {
        let mut c = Canvas::new(100, 100);
        c.stamp_disc(50, 50, 10);
        let area = c.count() as f64;
        assert!((area - std::f64::consts::PI * 100.0).abs() < 20.0);
        assert_eq!(c.get(60, 50), 1);
        assert_eq!(c.get(61, 50), 0);
    }

    #[test]
    fn off_canvas_spots_are_dropped() {
        let mut c = Canvas::new(50, 50);
        c.stamp_spots(&[spot(-1.0, 5.0), spot(50.0, 5.0), spot(f64::NAN, 1.0)], 3);
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn observation_u8_roundtrip() {
        let mut o = Observation::zeros();
        o.data[5] = 1.0;
        o.data[6] = 0.5;
        let back = Observation::from_u8(&o.to_u8()).unwrap();
        assert_eq!(back.data[5], 1.0);
        assert!((back.data[6] - 0.5).abs() < 0.5 / 255.0 + 1e-6);
    }
}
