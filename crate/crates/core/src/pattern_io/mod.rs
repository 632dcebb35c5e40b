//! Recorded detector frames to agent observations.

pub mod blob;
pub mod pnm;
pub mod refine;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LaueError, Result};
use crate::render::{gaussian_blur, render_observation, Canvas, Observation, SPOT_RADIUS_PX};
use crate::simulator::{DetectorGeometry, Spot};

pub use blob::{detect_blobs, log_response, Blob};
pub use pnm::{parse_pgm, parse_tiff, read_frame, write_frame, write_pgm, write_pgm8};

pub const BLUR_SIGMA_PRE: f64 = 0.5;

/// 16-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(LaueError::Shape { expected: vec![1, 1], got: vec![height, width] });
        }
        if data.len() != width * height {
            return Err(LaueError::Shape { expected: vec![height, width], got: vec![data.len()] });
        }
        Ok(Self { width, height, data })
    }

    /// Full-scale export of a binary canvas (1 becomes 65535).
    pub fn from_canvas(c: &Canvas) -> Self {
        Self { width: c.width, height: c.height, data: c.data.iter().map(|&v| if v != 0 { u16::MAX } else { 0 }).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Central `side x side` window, `side = min(width, height)`.
    pub fn center_crop(&self) -> RawFrame {
        let side = self.width.min(self.height);
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        let mut data = Vec::with_capacity(side * side);
        for y in y0..y0 + side {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + side]);
        }
        RawFrame { width: side, height: side, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPolicy {
    /// Central square of side `min(width, height)`.
    Center,
    /// Use the frame as is.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Half-width of the square median window.
    pub median_radius: usize,
    pub sigma: f64,
    pub clip_percentile: f64,
    pub log_sigmas: Vec<f64>,
    /// LoG response threshold on the frame scaled to [0, 1].
    pub threshold: f64,
    pub crop: CropPolicy,
    /// Fit fixed-radius discs to the filtered frame after LoG detection.
    pub refine: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            median_radius: 1,
            sigma: BLUR_SIGMA_PRE,
            clip_percentile: 99.0,
            log_sigmas: vec![2.0, 3.0, 4.0, 6.0, 8.0],
            threshold: 0.1,
            crop: CropPolicy::Center,
            refine: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 100.0) {
            return Err(LaueError::Config(format!("clip percentile {} outside (0, 100]", self.clip_percentile)));
        }
        if !(self.sigma >= 0.0) {
            return Err(LaueError::Config(format!("negative sigma {}", self.sigma)));
        }
        if self.log_sigmas.is_empty() || self.log_sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(LaueError::Config("LoG scales must be a nonempty list of positive values".into()));
        }
        Ok(())
    }
}

/// Median over a `(2r+1)^2` window with replicated borders.
pub fn median_filter(img: &[u16], w: usize, h: usize, r: usize) -> Vec<u16> {
    if r == 0 {
        return img.to_vec();
    }
    let r = r as isize;
    let mut win = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = vec![0u16; w * h];
    for y in 0..h {
        for x in 0..w {
            win.clear();
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    win.push(img[yy * w + xx]);
                }
            }
            let mid = win.len() / 2;
            out[y * w + x] = *win.select_nth_unstable(mid).1;
        }
    }
    out
}

pub fn median3(img: &[u16], w: usize, h: usize) -> Vec<u16> {
    median_filter(img, w, h, 1)
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    let k = ((p / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Median then Gaussian, before clipping.
pub fn denoise(frame: &RawFrame, cfg: &PipelineConfig) -> Vec<f64> {
    let med = median_filter(&frame.data, frame.width, frame.height, cfg.median_radius);
    let med: Vec<f64> = med.into_iter().map(f64::from).collect();
    gaussian_blur(&med, frame.width, frame.height, cfg.sigma)
}

/// Clips values above the percentile to it. A percentile equal to the
/// minimum would flatten the frame and is skipped.
pub fn clip_percentile(img: &mut [f64], p: f64) {
    let cap = percentile(img, p);
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    if cap > lo {
        img.iter_mut().for_each(|v| *v = v.min(cap));
    }
}

pub fn preprocess_f64(frame: &RawFrame, cfg: &PipelineConfig) -> Vec<f64> {
    let mut img = denoise(frame, cfg);
    clip_percentile(&mut img, cfg.clip_percentile);
    img
}

pub fn preprocess(frame: &RawFrame, cfg: &PipelineConfig) -> RawFrame {
    let data = preprocess_f64(frame, cfg).into_iter().map(|v| v.round().clamp(0.0, 65535.0) as u16).collect();
    RawFrame { width: frame.width, height: frame.height, data }
}

fn scaled(img: &[f64]) -> Vec<f64> {
    let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        img.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; img.len()]
    }
}

/// LoG spots on an already preprocessed frame, in frame pixel coordinates
/// (pixel centers at `i + 0.5`).
pub fn detect_spots(frame: &RawFrame, cfg: &PipelineConfig) -> Vec<Spot> {
    let img = scaled(&frame.to_f64());
    spots_from_blobs(&detect_blobs(&img, frame.width, frame.height, &cfg.log_sigmas, cfg.threshold))
}

fn spots_from_blobs(blobs: &[Blob]) -> Vec<Spot> {
    blobs.iter().map(|b| Spot { x_px: b.x as f64 + 0.5, y_px: b.y as f64 + 0.5, hkl: None, intensity: b.response }).collect()
}

/// Full pipeline up to spot centers in detector pixels.
pub fn extract_spots(frame: &RawFrame, cfg: &PipelineConfig, det: &DetectorGeometry) -> Vec<Spot> {
    let f = match cfg.crop {
        CropPolicy::Center => frame.center_crop(),
        CropPolicy::None => frame.clone(),
    };
    let (w, h) = (f.width, f.height);
    let smooth = denoise(&f, cfg);
    let mut clipped = smooth.clone();
    clip_percentile(&mut clipped, cfg.clip_percentile);
    let blobs = detect_blobs(&scaled(&clipped), w, h, &cfg.log_sigmas, cfg.threshold);
    let mut spots = if cfg.refine && !blobs.is_empty() {
        let peak = smooth.iter().copied().fold(0.0, f64::max);
        let target = smooth.iter().map(|v| v / peak).collect();
        let radius = (SPOT_RADIUS_PX as f64 * w as f64 / det.pixels_w as f64).round() as usize;
        let mut fit = refine::DiscFit::new(target, w, h, radius.max(1));
        let strength: std::collections::HashMap<(usize, usize), f64> = blobs.iter().map(|b| ((b.x, b.y), b.response)).collect();
        for b in &blobs {
            fit.add((b.x, b.y));
        }
        fit.run(3, 10);
        fit.centers
            .iter()
            .map(|&(x, y)| Spot {
                x_px: x as f64 + 0.5,
                y_px: y as f64 + 0.5,
                hkl: None,
                intensity: strength.get(&(x, y)).copied().unwrap_or(0.0),
            })
            .collect()
    } else {
        spots_from_blobs(&blobs)
    };
    let (sx, sy) = (det.pixels_w as f64 / w as f64, det.pixels_h as f64 / h as f64);
    for s in &mut spots {
        s.x_px *= sx;
        s.y_px *= sy;
    }
    spots.sort_by(|a, b| a.y_px.total_cmp(&b.y_px).then(a.x_px.total_cmp(&b.x_px)));
    spots
}

/// Preprocess, detect, crop to the square and render as the simulator does.
pub fn frame_to_observation(frame: &RawFrame, cfg: &PipelineConfig, det: &DetectorGeometry) -> (Observation, Vec<Spot>) {
    let spots = extract_spots(frame, cfg, det);
    (render_observation(&spots, det), spots)
}

pub const SPOT_CSV_HEADER: &str = "x_px,y_px,response";

pub fn write_spot_csv<W: Write>(mut w: W, spots: &[Spot]) -> Result<()> {
    writeln!(w, "{SPOT_CSV_HEADER}")?;
    for s in spots {
        writeln!(w, "{:.3},{:.3},{:.6}", s.x_px, s.y_px, s.intensity)?;
    }
    Ok(())
}

/// 8-bit PGM dump of an observation.
pub fn write_observation_pgm<W: Write>(w: W, obs: &Observation) -> Result<()> {
    let n = crate::render::OBS_SIZE;
    write_pgm8(w, n, n, &obs.to_u8())
}
