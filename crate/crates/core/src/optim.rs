//! Adam optimizer over a flat list of parameter arrays.

use crate::array::Array;
use crate::error::{Error, Result};

/// Adam with bias correction. Moments are kept per parameter array, in the
/// same order as the model's parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    /// Moments initialized to zero, matching `param_shapes`.
    pub fn new(lr: f64, param_shapes: &[(usize, usize)]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: param_shapes.iter().map(|&(r, c)| Array::zeros(r, c)).collect(),
            v: param_shapes.iter().map(|&(r, c)| Array::zeros(r, c)).collect(),
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [&mut Array], grads: &[Array]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam_step: expected {} parameter arrays, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != grads[i].shape() || p.shape() != self.m[i].shape() {
                return Err(Error::contract(format!(
                    "adam_step: shape mismatch at parameter {}: param {:?}, grad {:?}",
                    i,
                    p.shape(),
                    grads[i].shape()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                pd[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
