//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{Param, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different parameter list");
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + c1 * g;
                v[i] = b2 * v[i] + c2 * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: &[f64], grads: &[f64]) -> Param<f64> {
        let mut p = Param::zeros("p", &[vals.len()]);
        p.value = vals.to_vec();
        p.grad = grads.to_vec();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
        let mut opt = Adam::new(1e-4);
        opt.step(vec![&mut p]);
        assert_eq!(p.value, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let g = [0.5, -3.0, 1e-3];
        let mut p = param(&[0.0; 3], &g);
        let mut opt = Adam::new(1e-4);
        opt.step(vec![&mut p]);
        for (v, g) in p.value.iter().zip(g) {
            let want = -1e-4 * g / (g.abs() + 1e-8);
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_with_constant_gradient() {
        // constant g: m_t / (1 - b1^t) = g and v_t / (1 - b2^t) = g², every step
        let g = 0.7;
        let mut p = param(&[1.0], &[g]);
        let mut opt = Adam::new(1e-3);
        opt.step(vec![&mut p]);
        opt.step(vec![&mut p]);
        let want = 1.0 - 2.0 * 1e-3 * g / (g + 1e-8);
        assert!((p.value[0] - want).abs() < 1e-14);
    }
}
