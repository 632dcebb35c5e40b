//! Snaps detected centers to a union of fixed-radius discs that reproduces the
//! filtered frame.
//!
//! The model canvas goes through the same median and Gaussian stages as the
//! frame, and each center is moved, removed or added where that lowers the
//! squared residual. Uncovered bright regions get new centers.

use super::BLUR_SIGMA_PRE;
use crate::render::{gaussian_kernel, reflect_index, Canvas};

pub struct DiscFit {
    pub w: usize,
    pub h: usize,
    pub radius: usize,
    /// Filtered frame scaled to [0, 1].
    target: Vec<f64>,
    cover: Vec<u16>,
    offsets: Vec<(isize, isize)>,
    kernel: Vec<f64>,
    pub centers: Vec<(usize, usize)>,
}

#[derive(Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl DiscFit {
    pub fn new(target: Vec<f64>, w: usize, h: usize, radius: usize) -> Self {
        // disc footprint exactly as the renderer stamps it
        let side = 2 * radius + 1;
        let mut c = Canvas::new(side, side);
        c.stamp_disc(radius, radius, radius);
        let r = radius as isize;
        let offsets = (0..side * side)
            .filter(|&i| c.data[i] != 0)
            .map(|i| ((i % side) as isize - r, (i / side) as isize - r))
            .collect();
        Self { w, h, radius, target, cover: vec![0; w * h], offsets, kernel: gaussian_kernel(BLUR_SIGMA_PRE, 4.0), centers: Vec::new() }
    }

    fn stamp(&mut self, c: (usize, usize), delta: i32) {
        for &(dx, dy) in &self.offsets {
            let (x, y) = (c.0 as isize + dx, c.1 as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
                let v = &mut self.cover[y as usize * self.w + x as usize];
                *v = (*v as i32 + delta) as u16;
            }
        }
    }

    fn rect_around(&self, c: (usize, usize), reach: usize) -> Rect {
        let m = self.radius + reach + 3;
        Rect {
            x0: c.0.saturating_sub(m),
            y0: c.1.saturating_sub(m),
            x1: (c.0 + m + 1).min(self.w),
            y1: (c.1 + m + 1).min(self.h),
        }
    }

    /// Squared residual of the filtered model over `r`.
    fn loss(&self, r: Rect) -> f64 {
        let kr = (self.kernel.len() / 2) as isize;
        // median over the rect grown by the blur radius
        let mx0 = r.x0.saturating_sub(kr as usize);
        let my0 = r.y0.saturating_sub(kr as usize);
        let mx1 = (r.x1 + kr as usize).min(self.w);
        let my1 = (r.y1 + kr as usize).min(self.h);
        let mw = mx1 - mx0;
        let bin = |x: usize, y: usize| (self.cover[y * self.w + x] > 0) as u8;
        let mut med = vec![0f64; mw * (my1 - my0)];
        for y in my0..my1 {
            for x in mx0..mx1 {
                let mut n = 0;
                for dy in -1isize..=1 {
                    let yy = (y as isize + dy).clamp(0, self.h as isize - 1) as usize;
                    for dx in -1isize..=1 {
                        let xx = (x as isize + dx).clamp(0, self.w as isize - 1) as usize;
                        n += bin(xx, yy);
                    }
                }
                med[(y - my0) * mw + x - mx0] = (n >= 5) as u8 as f64;
            }
        }
        let rw = r.x1 - r.x0;
        let mut tmp = vec![0f64; rw * (my1 - my0)];
        for y in my0..my1 {
            for x in r.x0..r.x1 {
                let mut acc = 0.0;
                for (t, kv) in self.kernel.iter().enumerate() {
                    let sx = reflect_index(x as isize + t as isize - kr, self.w);
                    acc += kv * med[(y - my0) * mw + sx - mx0];
                }
                tmp[(y - my0) * rw + x - r.x0] = acc;
            }
        }
        let mut loss = 0.0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let mut acc = 0.0;
                for (t, kv) in self.kernel.iter().enumerate() {
                    let sy = reflect_index(y as isize + t as isize - kr, self.h);
                    acc += kv * tmp[(sy - my0) * rw + x - r.x0];
                }
                let d = acc - self.target[y * self.w + x];
                loss += d * d;
            }
        }
        loss
    }

    /// Best placement of one disc within `reach` of `c`, or `None` if leaving it out is no worse.
    fn best_position(&mut self, c: (usize, usize), reach: usize) -> Option<(usize, usize)> {
        let rect = self.rect_around(c, reach);
        let mut best: (f64, Option<(usize, usize)>) = (self.loss(rect), None);
        let reach = reach as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (c.0 as isize + dx, c.1 as isize + dy);
                if x < 0 || y < 0 || x as usize >= self.w || y as usize >= self.h {
                    continue;
                }
                let p = (x as usize, y as usize);
                self.stamp(p, 1);
                let l = self.loss(rect);
                self.stamp(p, -1);
                if l < best.0 - 1e-9 {
                    best = (l, Some(p));
                }
            }
        }
        best.1
    }

    pub fn add(&mut self, c: (usize, usize)) {
        self.stamp(c, 1);
        self.centers.push(c);
    }

    /// One pass of local moves over every center; returns whether anything changed.
    fn sweep(&mut self, reach: usize) -> bool {
        let mut changed = false;
        let mut i = 0;
        while i < self.centers.len() {
            let c = self.centers[i];
            self.stamp(c, -1);
            match self.best_position(c, reach) {
                Some(p) => {
                    self.stamp(p, 1);
                    changed |= p != c;
                    self.centers[i] = p;
                    i += 1;
                }
                None => {
                    self.centers.swap_remove(i);
                    changed = true;
                }
            }
        }
        changed
    }

    /// Connected bright regions the model leaves uncovered, as (centroid, size).
    fn uncovered(&self, min_size: usize) -> Vec<(usize, usize)> {
        let (w, h) = (self.w, self.h);
        let mask: Vec<bool> = (0..w * h).map(|i| self.target[i] > 0.5 && self.cover[i] == 0).collect();
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        for start in 0..w * h {
            if !mask[start] || seen[start] {
                continue;
            }
            let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                sx += x;
                sy += y;
                n += 1;
                for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if n >= min_size {
                out.push((sx / n, sy / n));
            }
        }
        out
    }

    /// Alternates local sweeps with seeding of uncovered regions.
    pub fn run(&mut self, reach: usize, rounds: usize) {
        for _ in 0..rounds {
            for _ in 0..8 {
                if !self.sweep(reach) {
                    break;
                }
            }
            let seeds = self.uncovered(self.radius);
            if seeds.is_empty() {
                break;
            }
            for s in seeds {
                if let Some(p) = self.best_position(s, self.radius) {
                    self.add(p);
                }
            }
        }
    }
}
