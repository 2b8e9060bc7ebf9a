//! Adam over a flat parameter vector.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, params: usize) -> Self {
        Adam {
            lr,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut [f64]>, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam gradient", self.m.len(), grads.len()));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let mut k = 0;
        for chunk in params {
            for p in chunk.iter_mut() {
                let Some(&g) = grads.get(k) else {
                    return Err(Error::shape("adam parameters", self.m.len(), k + 1));
                };
                self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
                self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
        if k != self.m.len() {
            return Err(Error::shape("adam parameters", self.m.len(), k));
        }
        Ok(())
    }
}
