//! Convolutional encoder: (1,84,84) -> 4 x conv3x3 (strides 2,2,1,1) -> 14112
//! -> linear 50 -> layer norm -> tanh.

use rand::Rng;

use super::init::RELU_GAIN;
use super::layers::{relu_backward, relu_in_place, tanh_backward, tanh_in_place, Conv2d, LayerNorm, Linear};
use super::{check_shape, Module, Param, Real, Tensor};
use crate::error::{LaueError, Result};
use crate::render::OBS_SIZE;

pub const FEATURE_DIM: usize = 50;
pub const FILTERS: usize = 32;
pub const STRIDES: [usize; 4] = [2, 2, 1, 1];
/// 32 channels x 21 x 21.
pub const FLAT_DIM: usize = 14112;

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub convs: [Conv2d<T>; 4],
    pub linear: Linear<T>,
    pub norm: LayerNorm<T>,
    acts: Option<Vec<Tensor<T>>>,
    out: Option<Tensor<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, rng: &mut R) -> Self {
        Self::with_input(name, 1, FEATURE_DIM, rng)
    }

    /// Same topology with a different input channel count or feature width.
    pub fn with_input<R: Rng + ?Sized>(name: &str, channels: usize, features: usize, rng: &mut R) -> Self {
        let convs = [0, 1, 2, 3].map(|i| {
            let cin = if i == 0 { channels } else { FILTERS };
            Conv2d::new(&format!("{name}.conv{i}"), cin, FILTERS, 3, STRIDES[i], 1, RELU_GAIN, rng)
        });
        Self {
            convs,
            linear: Linear::new(&format!("{name}.fc"), FLAT_DIM, features, 1.0, rng),
            norm: LayerNorm::new(&format!("{name}.ln"), features),
            acts: None,
            out: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.linear.out_features
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        check_shape(&[x.batch(), self.convs[0].in_channels, OBS_SIZE, OBS_SIZE], &x.shape)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.infer(&h)?;
            relu_in_place(&mut h);
        }
        let b = h.batch();
        let h = h.reshape(&[b, FLAT_DIM])?;
        let mut y = self.norm.infer(&self.linear.infer(&h)?)?;
        tanh_in_place(&mut y);
        Ok(y)
    }

    /// Post-ReLU activation maps of the four convolutions (for dormancy checks).
    pub fn infer_conv_activations(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(4);
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.infer(&h)?;
            relu_in_place(&mut h);
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(4);
        let mut h = x.clone();
        for conv in self.convs.iter_mut() {
            h = conv.forward(&h)?;
            relu_in_place(&mut h);
            acts.push(h.clone());
        }
        let b = h.batch();
        let h = h.reshape(&[b, FLAT_DIM])?;
        let z = self.linear.forward(&h)?;
        let mut y = self.norm.forward(&z)?;
        tanh_in_place(&mut y);
        self.acts = Some(acts);
        self.out = Some(y.clone());
        Ok(y)
    }

    /// Backpropagates a feature gradient into the encoder parameters.
    pub fn backward(&mut self, g_feat: &Tensor<T>) -> Result<()> {
        let acts = self.acts.take().ok_or(LaueError::NoForwardCache("encoder"))?;
        let y = self.out.take().ok_or(LaueError::NoForwardCache("encoder"))?;
        let mut g = g_feat.clone();
        tanh_backward(&mut g, &y);
        let g = self.norm.backward(&g)?;
        let g = self.linear.backward(&g, true)?.expect("input grad requested");
        let shape = acts[3].shape.clone();
        let mut g = g.reshape(&shape)?;
        for i in (0..4).rev() {
            relu_backward(&mut g, &acts[i]);
            match self.convs[i].backward(&g, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.linear.params());
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.linear.params_mut());
        v.extend(self.norm.params_mut());
        v
    }
}
