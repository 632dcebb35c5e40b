//! Linear, 2-D convolution, layer norm and pointwise activations.

use rand::Rng;

use super::init::orthogonal;
use super::{check_shape, matmul, Module, Param, Real, Tensor};
use crate::error::{LaueError, Result};

/// `y = x Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, gain: f64, rng: &mut R) -> Self {
        let mut weight = Param::zeros(format!("{name}.weight"), &[out_features, in_features]);
        weight.value = orthogonal(out_features, in_features, gain, rng);
        Self {
            weight,
            bias: Param::zeros(format!("{name}.bias"), &[out_features]),
            in_features,
            out_features,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_shape(&[x.batch(), self.in_features], &x.shape)?;
        let b = x.batch();
        let mut y = Tensor::zeros(&[b, self.out_features]);
        matmul(&x.data, false, &self.weight.value, true, &mut y.data, b, self.in_features, self.out_features, false);
        for row in y.data.chunks_exact_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, &bb)| *v += bb);
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, gy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self.cache.take().ok_or(LaueError::NoForwardCache("linear"))?;
        let b = x.batch();
        check_shape(&[b, self.out_features], &gy.shape)?;
        matmul(&gy.data, true, &x.data, false, &mut self.weight.grad, self.out_features, b, self.in_features, true);
        for row in gy.data.chunks_exact(self.out_features) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
        }
        if !input_grad {
            return Ok(None);
        }
        let mut gx = Tensor::zeros(&[b, self.in_features]);
        matmul(&gy.data, false, &self.weight.value, false, &mut gx.data, b, self.out_features, self.in_features, false);
        Ok(Some(gx))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Square-kernel 2-D convolution via im2col, weights `[out, in * k * k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

/// Columns per GEMM call when batching im2col.
const CONV_COLS_TARGET: usize = 4096;

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let mut weight = Param::zeros(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel]);
        weight.value = orthogonal(out_channels, fan_in, gain, rng);
        Self {
            weight,
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
        if x.shape.len() != 4 || x.shape[1] != self.in_channels || x.shape[2] + 2 * self.padding < self.kernel {
            return Err(LaueError::Shape {
                expected: vec![x.batch(), self.in_channels, x.shape.get(2).copied().unwrap_or(0), x.shape.get(3).copied().unwrap_or(0)],
                got: x.shape.clone(),
            });
        }
        let (h, w) = (x.shape[2], x.shape[3]);
        let (ho, wo) = self.output_hw(h, w);
        Ok((x.shape[0], h, w, ho, wo))
    }

    /// Writes the patch matrix of one sample into `cols` at column offset `off`
    /// of a `[C k k, stride_cols]` buffer.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, img: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T], stride_cols: usize, off: usize) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        for c in 0..self.in_channels {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * stride_cols + off..row * stride_cols + off + ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        let d = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            d.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in d.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im_add(&self, cols: &[T], stride_cols: usize, off: usize, h: usize, w: usize, ho: usize, wo: usize, img: &mut [T]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        for c in 0..self.in_channels {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * stride_cols + off..row * stride_cols + off + ho * wo];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn chunk(&self, hw_out: usize) -> usize {
        (CONV_COLS_TARGET / hw_out.max(1)).max(1)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, h, w, ho, wo) = self.dims(x)?;
        let (o, ckk, hw) = (self.out_channels, self.in_channels * self.kernel * self.kernel, ho * wo);
        let in_len = self.in_channels * h * w;
        let mut y = Tensor::zeros(&[n, o, ho, wo]);
        let chunk = self.chunk(hw);
        let mut cols = vec![T::zero(); ckk * chunk * hw];
        let mut out = vec![T::zero(); o * chunk * hw];
        for start in (0..n).step_by(chunk) {
            let cnt = chunk.min(n - start);
            let sc = cnt * hw;
            for i in 0..cnt {
                let img = &x.data[(start + i) * in_len..(start + i + 1) * in_len];
                self.im2col(img, h, w, ho, wo, &mut cols, sc, i * hw);
            }
            matmul(&self.weight.value, false, &cols, false, &mut out, o, ckk, sc, false);
            for i in 0..cnt {
                let dst = &mut y.data[(start + i) * o * hw..(start + i + 1) * o * hw];
                for oc in 0..o {
                    let b = self.bias.value[oc];
                    let src = &out[oc * sc + i * hw..oc * sc + (i + 1) * hw];
                    dst[oc * hw..(oc + 1) * hw].iter_mut().zip(src).for_each(|(d, &s)| *d = s + b);
                }
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self.cache.take().ok_or(LaueError::NoForwardCache("conv2d"))?;
        let (n, h, w, ho, wo) = self.dims(&x)?;
        check_shape(&[n, self.out_channels, ho, wo], &gy.shape)?;
        let (o, ckk, hw) = (self.out_channels, self.in_channels * self.kernel * self.kernel, ho * wo);
        let in_len = self.in_channels * h * w;
        let chunk = self.chunk(hw);
        let mut cols = vec![T::zero(); ckk * chunk * hw];
        let mut g = vec![T::zero(); o * chunk * hw];
        let mut gcols = if input_grad { vec![T::zero(); ckk * chunk * hw] } else { Vec::new() };
        let mut gx = if input_grad { Some(Tensor::zeros(&x.shape)) } else { None };
        for start in (0..n).step_by(chunk) {
            let cnt = chunk.min(n - start);
            let sc = cnt * hw;
            for i in 0..cnt {
                let img = &x.data[(start + i) * in_len..(start + i + 1) * in_len];
                self.im2col(img, h, w, ho, wo, &mut cols, sc, i * hw);
                let src = &gy.data[(start + i) * o * hw..(start + i + 1) * o * hw];
                for oc in 0..o {
                    let s = &src[oc * hw..(oc + 1) * hw];
                    g[oc * sc + i * hw..oc * sc + (i + 1) * hw].copy_from_slice(s);
                    self.bias.grad[oc] += s.iter().fold(T::zero(), |a, &b| a + b);
                }
            }
            matmul(&g, false, &cols, true, &mut self.weight.grad, o, sc, ckk, true);
            if let Some(gx) = gx.as_mut() {
                matmul(&self.weight.value, true, &g, false, &mut gcols, ckk, o, sc, false);
                for i in 0..cnt {
                    let img = &mut gx.data[(start + i) * in_len..(start + i + 1) * in_len];
                    self.col2im_add(&gcols, sc, i * hw, h, w, ho, wo, img);
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the feature axis of `[B, D]`, with affine terms.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub dim: usize,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        let mut gamma = Param::zeros(format!("{name}.gamma"), &[dim]);
        gamma.value.fill(T::one());
        Self { gamma, beta: Param::zeros(format!("{name}.beta"), &[dim]), dim, cache: None }
    }

    /// Normalized values before the affine transform, and per-row `1/std`.
    pub fn normalize(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        check_shape(&[x.batch(), self.dim], &x.shape)?;
        let d = T::of(self.dim as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(x.batch());
        for row in x.data.chunks_exact(self.dim) {
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / d;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / d;
            let r = T::one() / (var + eps).sqrt();
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
            rstd.push(r);
        }
        Ok((xhat, rstd))
    }

    fn affine(&self, xhat: &[T], batch: usize) -> Tensor<T> {
        let mut data = xhat.to_vec();
        for row in data.chunks_exact_mut(self.dim) {
            for ((v, &g), &b) in row.iter_mut().zip(&self.gamma.value).zip(&self.beta.value) {
                *v = *v * g + b;
            }
        }
        Tensor { shape: vec![batch, self.dim], data }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, _) = self.normalize(x)?;
        Ok(self.affine(&xhat, x.batch()))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, rstd) = self.normalize(x)?;
        let y = self.affine(&xhat, x.batch());
        self.cache = Some((xhat, rstd));
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, rstd) = self.cache.take().ok_or(LaueError::NoForwardCache("layer_norm"))?;
        check_shape(&[rstd.len(), self.dim], &gy.shape)?;
        let d = T::of(self.dim as f64);
        let mut gx = Tensor::zeros(&gy.shape);
        for (i, (g_row, xh)) in gy.data.chunks_exact(self.dim).zip(xhat.chunks_exact(self.dim)).enumerate() {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for j in 0..self.dim {
                self.gamma.grad[j] += g_row[j] * xh[j];
                self.beta.grad[j] += g_row[j];
                let gh = g_row[j] * self.gamma.value[j];
                sum_g += gh;
                sum_gx += gh * xh[j];
            }
            let out = &mut gx.data[i * self.dim..(i + 1) * self.dim];
            for j in 0..self.dim {
                let gh = g_row[j] * self.gamma.value[j];
                out[j] = rstd[i] / d * (d * gh - sum_g - xh[j] * sum_gx);
            }
        }
        Ok(gx)
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Real>(gy: &mut Tensor<T>, y: &Tensor<T>) {
    gy.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
}

pub fn tanh_in_place<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.tanh());
}

/// Gradient through tanh given its output.
pub fn tanh_backward<T: Real>(gy: &mut Tensor<T>, y: &Tensor<T>) {
    gy.data.iter_mut().zip(&y.data).for_each(|(g, &v)| *g *= T::one() - v * v);
}
