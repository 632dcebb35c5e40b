//! Small differentiable kernel: tensors, layers with explicit backward passes,
//! Adam, orthogonal init, shift augmentation and checkpoints.
//!
//! Layers are generic over [`Real`] so the same code runs in `f32` for training
//! and in `f64` for finite-difference gradient checks.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod encoder;
pub mod init;
pub mod layers;
pub mod mlp;

pub use adam::Adam;
pub use augment::random_shift;
pub use encoder::Encoder;
pub use layers::{Conv2d, LayerNorm, Linear};
pub use mlp::Mlp;

use num_traits::Float;
use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use crate::error::{LaueError, Result};

/// Scalar type with a GEMM kernel.
pub trait Real: Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static {
    /// `C = alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Every strided index implied by the dimensions must be inside the buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn of(v: f64) -> f32 {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn of(v: f64) -> f64 {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Row-major matrix product `C (m x n) = op(A) op(B) (+ C when accumulate)`.
///
/// `A` is stored `[m, k]`, or `[k, m]` when `ta`; `B` is `[k, n]`, or `[n, k]` when `tb`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: sizes checked above; the strides describe dense row-major storage.
    unsafe {
        T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Dense row-major tensor of up to four axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(LaueError::Shape { expected: shape, got: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per batch entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let r = self.row_len();
        &self.data[i * r..(i + 1) * r]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(LaueError::Shape { expected: shape.to_vec(), got: self.shape });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates two `[B, *]` tensors along the feature axis.
    pub fn concat_cols(a: &Self, b: &Self) -> Result<Self> {
        let n = a.batch();
        if b.batch() != n {
            return Err(LaueError::Shape { expected: vec![n], got: vec![b.batch()] });
        }
        let (ra, rb) = (a.row_len(), b.row_len());
        let mut data = Vec::with_capacity(n * (ra + rb));
        for i in 0..n {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Ok(Self { shape: vec![n, ra + rb], data })
    }

    /// Splits `[B, a + b]` into its first `a` and remaining columns.
    pub fn split_cols(&self, a: usize) -> (Self, Self) {
        let n = self.batch();
        let r = self.row_len();
        let mut left = Vec::with_capacity(n * a);
        let mut right = Vec::with_capacity(n * (r - a));
        for i in 0..n {
            let row = self.row(i);
            left.extend_from_slice(&row[..a]);
            right.extend_from_slice(&row[a..]);
        }
        (Self { shape: vec![n, a], data: left }, Self { shape: vec![n, r - a], data: right })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), value: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything holding parameters in a fixed order.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Copies parameter values from a structurally identical module.
    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value.copy_from_slice(&src.value);
        }
    }

    /// `θ̄ ← (1 − τ) θ̄ + τ θ`.
    fn soft_update_from(&mut self, other: &Self, tau: f64)
    where
        Self: Sized,
    {
        let tau = T::of(tau);
        let keep = T::one() - tau;
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, &s) in dst.value.iter_mut().zip(&src.value) {
                *d = keep * *d + tau * s;
            }
        }
    }
}

pub(crate) fn check_shape(expected: &[usize], got: &[usize]) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(LaueError::Shape { expected: expected.to_vec(), got: got.to_vec() })
    }
}
