use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam with bias correction, or plain SGD, over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn adam(n_params: usize, lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, n_params, lr)
    }

    pub fn new(kind: OptimizerKind, n_params: usize, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. A non-finite gradient leaves them untouched.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter {i} on step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let lr = T::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
                let one = T::one();
                let c1 = one - b1.powi(self.step as i32);
                let c2 = one - b2.powi(self.step as i32);
                let eps = T::lit(self.eps);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (one - b1) * g;
                    self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] = params[i] - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameter after step {}",
                self.step
            )));
        }
        Ok(())
    }
}
