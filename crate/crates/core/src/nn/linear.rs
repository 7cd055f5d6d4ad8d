use rand::Rng;

use super::tensor::{gemm, Mat, Scalar, Tensor};
use super::uniform_init;
use crate::error::{invalid, Result};

/// Affine map `y = W x + b` over `[batch, features]`; parameters `W [out, in]` then `b [out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub input: usize,
    pub output: usize,
    x: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(input: usize, output: usize) -> Self {
        Linear {
            input,
            output,
            x: Vec::new(),
            batch: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn init(&self, p: &mut [T], rng: &mut impl Rng) {
        uniform_init(p, self.input, rng);
    }

    pub fn forward(&mut self, p: &[T], x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(2, "linear")?;
        if x.shape()[1] != self.input {
            return Err(invalid(format!(
                "linear expects {} features, got {}",
                self.input,
                x.shape()[1]
            )));
        }
        let b = x.shape()[0];
        let (w, bias) = p.split_at(self.input * self.output);
        let mut y = Tensor::zeros(&[b, self.output]);
        for row in y.data_mut().chunks_exact_mut(self.output) {
            row.copy_from_slice(bias);
        }
        gemm(
            Mat::new(x.data(), b, self.input),
            Mat::new(w, self.output, self.input).t(),
            T::one(),
            y.data_mut(),
            self.output,
        );
        self.x = x.data().to_vec();
        self.batch = b;
        Ok(y)
    }

    pub fn backward(
        &mut self,
        p: &[T],
        g: &mut [T],
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let b = self.batch;
        if dy.shape() != [b, self.output] {
            return Err(invalid(
                "linear gradient shape does not match the forward pass",
            ));
        }
        let (gw, gb) = g.split_at_mut(self.input * self.output);
        let dym = Mat::new(dy.data(), b, self.output);
        gemm(
            dym.t(),
            Mat::new(&self.x, b, self.input),
            T::one(),
            gw,
            self.input,
        );
        for row in dy.data().chunks_exact(self.output) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        if !need_dx {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&[b, self.input]);
        gemm(
            dym,
            Mat::new(&p[..self.input * self.output], self.output, self.input),
            T::zero(),
            dx.data_mut(),
            self.input,
        );
        Ok(Some(dx))
    }
}

/// Elementwise `max(x, 0)`; the gradient at exactly zero is taken as zero.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        self.mask = x.data().iter().map(|&v| v > T::zero()).collect();
        for v in x.data_mut() {
            *v = v.max(T::zero());
        }
        x
    }

    pub fn backward<T: Scalar>(&self, mut dx: Tensor<T>) -> Result<Tensor<T>> {
        if dx.len() != self.mask.len() {
            return Err(invalid(
                "relu gradient length does not match the forward pass",
            ));
        }
        for (v, &on) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !on {
                *v = T::zero();
            }
        }
        Ok(dx)
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(invalid(format!(
            "mse shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(invalid("mse of an empty tensor"));
    }
    let n = T::from_usize(pred.len()).unwrap();
    let two = T::lit(2.0);
    let mut grad = pred.clone();
    let mut sum = T::zero();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sum = sum + d * d;
        *g = two * d / n;
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut l = Linear::<f64>::new(3, 3);
        let mut p = vec![0.0; l.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(l.forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn all_ones_row_sums_inputs() {
        let mut l = Linear::<f64>::new(256, 1);
        let mut p = vec![1.0; l.param_count()];
        p[256] = 0.0;
        let x: Vec<f64> = (0..256).map(|i| i as f64 * 0.01).collect();
        let s: f64 = x.iter().sum();
        let y = l.forward(&p, &Tensor::new(&[1, 256], x).unwrap()).unwrap();
        assert!((y.data()[0] - s).abs() < 1e-9);
    }

    #[test]
    fn mse_of_constant_offset_is_its_square() {
        let a = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[4, 1], vec![1.5, 2.5, 3.5, 4.5]).unwrap();
        let (l, g) = mse_loss(&a, &b).unwrap();
        assert!((l - 0.25f64).abs() < 1e-15);
        assert!(g.data().iter().all(|&v| (v + 0.25).abs() < 1e-15));
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        assert!(mse_loss(&a, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn relu_zeroes_negatives_and_their_gradient() {
        let mut r = Relu::default();
        let x = Tensor::new(&[4], vec![-1.0f32, 0.0, 2.0, -3.0]).unwrap();
        assert_eq!(r.forward(x).data(), &[0.0, 0.0, 2.0, 0.0]);
        let dx = r
            .backward(Tensor::new(&[4], vec![1.0f32; 4]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
