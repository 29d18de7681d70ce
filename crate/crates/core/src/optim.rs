//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let step_size = T::lit(self.lr / bias1);
        let inv_sqrt_bias2 = T::lit(1.0 / bias2.sqrt());
        let eps = T::lit(self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.len() != p.data().len() {
                return Err(Error::invalid(format!("adam: gradient {i} has wrong length")));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                *x -= step_size * *mi / (vi.sqrt() * inv_sqrt_bias2 + eps);
            }
        }
        Ok(())
    }
}
