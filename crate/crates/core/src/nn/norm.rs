use super::tensor::{Scalar, Tensor};
use crate::error::{invalid, Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalisation over every axis but the last.
///
/// Parameters are `[gamma; c]` then `[beta; c]`. Running variance uses the
/// unbiased batch estimate.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<T> {
    pub channels: usize,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Number of training batches folded into the running statistics.
    pub updates: u64,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            channels,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            updates: 0,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            shape: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn init(&self, p: &mut [T]) {
        let (gamma, beta) = p.split_at_mut(self.channels);
        gamma.fill(T::one());
        beta.fill(T::zero());
    }

    pub fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        if mean.len() != self.channels || var.len() != self.channels {
            return Err(invalid(
                "running statistics length must equal the channel count",
            ));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.updates = self.updates.max(1);
        Ok(())
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.channels || x.shape().len() < 2 {
            return Err(invalid(format!(
                "batchnorm over {} channels got shape {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(x.len() / c)
    }

    pub fn forward(&mut self, p: &[T], x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let n = self.check(&x)?;
        let c = self.channels;
        let (gamma, beta) = p.split_at(c);
        let eps = T::lit(BN_EPSILON);
        let mut y = x;
        if !train {
            if self.updates == 0 {
                return Err(Error::UninitializedStatistics);
            }
            let scale: Vec<T> = (0..c)
                .map(|j| gamma[j] / (self.running_var[j] + eps).sqrt())
                .collect();
            for row in y.data_mut().chunks_exact_mut(c) {
                for j in 0..c {
                    row[j] = (row[j] - self.running_mean[j]) * scale[j] + beta[j];
                }
            }
            return Ok(y);
        }
        if n < 2 {
            return Err(invalid(
                "batchnorm training needs at least two values per channel",
            ));
        }
        let nf = T::from_usize(n).unwrap();
        let mut mean = vec![T::zero(); c];
        for row in y.data().chunks_exact(c) {
            for j in 0..c {
                mean[j] = mean[j] + row[j];
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        let mut var = vec![T::zero(); c];
        for row in y.data().chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] = var[j] + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / nf);
        self.inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.xhat.clear();
        self.xhat.reserve(y.len());
        for row in y.data_mut().chunks_exact_mut(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * self.inv_std[j];
                self.xhat.push(h);
                row[j] = gamma[j] * h + beta[j];
            }
        }
        let m = T::lit(BN_MOMENTUM);
        let unbias = nf / (nf - T::one());
        for j in 0..c {
            self.running_mean[j] = (T::one() - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (T::one() - m) * self.running_var[j] + m * var[j] * unbias;
        }
        self.updates += 1;
        self.shape = y.shape().to_vec();
        Ok(y)
    }

    /// Backward through a training-mode forward pass.
    pub fn backward(&mut self, p: &[T], g: &mut [T], dy: Tensor<T>) -> Result<Tensor<T>> {
        if dy.shape() != self.shape.as_slice() {
            return Err(invalid(
                "batchnorm gradient shape does not match the forward pass",
            ));
        }
        let c = self.channels;
        let n = dy.len() / c;
        let nf = T::from_usize(n).unwrap();
        let gamma = &p[..c];
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (row, h) in dy.data().chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] = sum_dy[j] + row[j];
                sum_dy_xhat[j] = sum_dy_xhat[j] + row[j] * h[j];
            }
        }
        for j in 0..c {
            g[j] = g[j] + sum_dy_xhat[j];
            g[c + j] = g[c + j] + sum_dy[j];
        }
        let mut dx = dy;
        for (row, h) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(self.xhat.chunks_exact(c))
        {
            for j in 0..c {
                let k = gamma[j] * self.inv_std[j] / nf;
                row[j] = k * (nf * row[j] - sum_dy[j] - h[j] * sum_dy_xhat[j]);
            }
        }
        Ok(dx)
    }
}
