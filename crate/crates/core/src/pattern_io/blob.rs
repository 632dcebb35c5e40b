//! Scale-normalized Laplacian-of-Gaussian blob detection.

use serde::{Deserialize, Serialize};

use crate::render::reflect_index;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Pixel indices of the response maximum.
    pub x: usize,
    pub y: usize,
    pub sigma: f64,
    pub response: f64,
}

fn kernels(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (4.0 * sigma + 0.5) as isize;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let g: Vec<f64> = (-r..=r).map(|i| norm * (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s2 = sigma * sigma;
    let g2: Vec<f64> = (-r..=r).zip(&g).map(|(i, &v)| v * ((i * i) as f64 - s2) / (s2 * s2)).collect();
    (g, g2)
}

fn conv_rows(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * r as usize];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect_index(i as isize - r, w)];
        }
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, kv) in k.iter().enumerate() {
            for (d, s) in dst.iter_mut().zip(&padded[t..t + w]) {
                *d += kv * s;
            }
        }
    }
    out
}

fn conv_cols(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            for (d, s) in dst.iter_mut().zip(&img[sy * w..(sy + 1) * w]) {
                *d += kv * s;
            }
        }
    }
    out
}

/// `−σ² ∇²(G_σ * img)`; bright blobs give positive peaks.
pub fn log_response(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let (g, g2) = kernels(sigma);
    let xx = conv_cols(&conv_rows(img, w, h, &g2), w, h, &g);
    let yy = conv_cols(&conv_rows(img, w, h, &g), w, h, &g2);
    let s2 = sigma * sigma;
    xx.iter().zip(&yy).map(|(a, b)| -s2 * (a + b)).collect()
}

/// Local maxima over space and scale with response above `threshold`.
/// Ties go to the lowest (scale, y, x) index.
pub fn detect_blobs(img: &[f64], w: usize, h: usize, sigmas: &[f64], threshold: f64) -> Vec<Blob> {
    if img.iter().all(|&v| v == img[0]) {
        return Vec::new();
    }
    let stack: Vec<Vec<f64>> = sigmas.iter().map(|&s| log_response(img, w, h, s)).collect();
    let mut out = Vec::new();
    for (si, layer) in stack.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let v = layer[y * w + x];
                if v < threshold {
                    continue;
                }
                let mut peak = true;
                'n: for ds in -1isize..=1 {
                    let s = si as isize + ds;
                    if s < 0 || s >= stack.len() as isize {
                        continue;
                    }
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if (ds, dy, dx) == (0, 0, 0) {
                                continue;
                            }
                            let (nx, ny) = (x as isize + dx, y as isize + dy);
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let u = stack[s as usize][ny as usize * w + nx as usize];
                            if u > v || (u == v && (ds, dy, dx) < (0, 0, 0)) {
                                peak = false;
                                break 'n;
                            }
                        }
                    }
                }
                if peak {
                    out.push(Blob { x, y, sigma: sigmas[si], response: v });
                }
            }
        }
    }
    out.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn gaussian_blob(w: usize, h: usize, x0: f64, y0: f64, s: f64, img: &mut [f64]) {
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - x0).powi(2) + (y as f64 - y0).powi(2);
                img[y * w + x] += (-d2 / (2.0 * s * s)).exp();
            }
        }
    }

    const SIGMAS: [f64; 5] = [2.0, 3.0, 4.0, 6.0, 8.0];

    #[test]
    fn blank_frame_has_no_blobs() {
        assert!(detect_blobs(&vec![0.3; 64 * 64], 64, 64, &SIGMAS, 0.05).is_empty());
    }

    #[test]
    fn single_blob_localized_with_scale() {
        for (sb, x0, y0) in [(2.0, 40.0, 33.0), (3.0, 50.0, 47.0), (4.5, 61.0, 58.0)] {
            let (w, h) = (120, 110);
            let mut img = vec![0.0; w * h];
            gaussian_blob(w, h, x0, y0, sb, &mut img);
            let b = detect_blobs(&img, w, h, &SIGMAS, 0.05);
            assert_eq!(b.len(), 1, "{b:?}");
            assert!((b[0].x as f64 - x0).abs() <= 1.0 && (b[0].y as f64 - y0).abs() <= 1.0);
            // blob radius σ_b·√2; the picked scale must be within one step of it
            let best = SIGMAS.iter().position(|&s| s == b[0].sigma).unwrap() as isize;
            let want = SIGMAS
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - sb * SQRT_2).abs().total_cmp(&(b.1 - sb * SQRT_2).abs()))
                .unwrap()
                .0 as isize;
            assert!((best - want).abs() <= 1, "σ_b {sb}: picked {}", b[0].sigma);
        }
    }

    #[test]
    fn two_blobs_two_detections() {
        let (w, h) = (160, 100);
        let mut img = vec![0.0; w * h];
        gaussian_blob(w, h, 40.0, 50.0, 3.0, &mut img);
        gaussian_blob(w, h, 115.0, 45.0, 3.0, &mut img);
        let b = detect_blobs(&img, w, h, &SIGMAS, 0.05);
        assert_eq!(b.len(), 2, "{b:?}");
    }
}
