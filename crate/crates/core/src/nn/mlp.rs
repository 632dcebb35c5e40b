//! Two-hidden-layer perceptron used for actor and critic heads.

use rand::Rng;

use super::init::RELU_GAIN;
use super::layers::{relu_backward, relu_in_place, tanh_backward, tanh_in_place, Linear};
use super::{Module, Param, Real, Tensor};
use crate::error::{LaueError, Result};

pub const HIDDEN_DIM: usize = 1024;

#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: [Linear<T>; 3],
    pub tanh_out: bool,
    hidden: Option<[Tensor<T>; 2]>,
    out: Option<Tensor<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, output: usize, tanh_out: bool, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::new(&format!("{name}.0"), input, hidden, RELU_GAIN, rng),
                Linear::new(&format!("{name}.1"), hidden, hidden, RELU_GAIN, rng),
                Linear::new(&format!("{name}.2"), hidden, output, 1.0, rng),
            ],
            tanh_out,
            hidden: None,
            out: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_features
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].out_features
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].infer(x)?;
        relu_in_place(&mut h);
        let mut h = self.layers[1].infer(&h)?;
        relu_in_place(&mut h);
        let mut y = self.layers[2].infer(&h)?;
        if self.tanh_out {
            tanh_in_place(&mut y);
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h0 = self.layers[0].forward(x)?;
        relu_in_place(&mut h0);
        let mut h1 = self.layers[1].forward(&h0)?;
        relu_in_place(&mut h1);
        let mut y = self.layers[2].forward(&h1)?;
        if self.tanh_out {
            tanh_in_place(&mut y);
            self.out = Some(y.clone());
        }
        self.hidden = Some([h0, h1]);
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let [h0, h1] = self.hidden.take().ok_or(LaueError::NoForwardCache("mlp"))?;
        let mut g = gy.clone();
        if self.tanh_out {
            let y = self.out.take().ok_or(LaueError::NoForwardCache("mlp"))?;
            tanh_backward(&mut g, &y);
        }
        let mut g = self.layers[2].backward(&g, true)?.expect("input grad requested");
        relu_backward(&mut g, &h1);
        let mut g = self.layers[1].backward(&g, true)?.expect("input grad requested");
        relu_backward(&mut g, &h0);
        self.layers[0].backward(&g, input_grad)
    }

    /// Post-ReLU hidden activations for `x`.
    pub fn infer_hidden(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 2]> {
        let mut h0 = self.layers[0].infer(x)?;
        relu_in_place(&mut h0);
        let mut h1 = self.layers[1].infer(&h0)?;
        relu_in_place(&mut h1);
        Ok([h0, h1])
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
