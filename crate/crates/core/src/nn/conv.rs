use rand::Rng;

use super::tensor::{gemm, Mat, Scalar, Tensor};
use super::uniform_init;
use crate::error::{invalid, Result};

pub const KERNEL: usize = 3;

/// Kernel-3, stride-1, zero-padding-1 convolution over `[batch, length, channels]`.
///
/// Weights are kept as `[c_out, 3, c_in]` so that one GEMM over an overlapping
/// view of the padded input computes every output position.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub c_in: usize,
    pub c_out: usize,
    padded: Vec<T>,
    dims: (usize, usize),
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        Conv1d {
            c_in,
            c_out,
            padded: Vec::new(),
            dims: (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        self.c_out * (KERNEL * self.c_in + 1)
    }

    /// Weight tap `w[o, i, k]` inside the parameter slice.
    pub fn weight_index(&self, o: usize, i: usize, k: usize) -> usize {
        (o * KERNEL + k) * self.c_in + i
    }

    pub fn bias_offset(&self) -> usize {
        self.c_out * KERNEL * self.c_in
    }

    pub fn init(&self, p: &mut [T], rng: &mut impl Rng) {
        let fan_in = KERNEL * self.c_in;
        uniform_init(p, fan_in, rng);
    }

    pub fn forward(&mut self, p: &[T], x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "conv1d")?;
        let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.c_in {
            return Err(invalid(format!(
                "conv1d expects {} input channels, got {c}",
                self.c_in
            )));
        }
        if l < KERNEL {
            return Err(invalid(format!("conv1d needs length >= {KERNEL}, got {l}")));
        }
        let lp = l + 2;
        self.padded.clear();
        self.padded.resize(b * lp * c, T::zero());
        for (bi, src) in x.data().chunks_exact(l * c).enumerate() {
            self.padded[(bi * lp + 1) * c..(bi * lp + 1 + l) * c].copy_from_slice(src);
        }
        self.dims = (b, l);
        let k = KERNEL * c;
        let m = b * lp - 2;
        let mut full = vec![T::zero(); b * lp * self.c_out];
        let w = Mat::new(&p[..self.c_out * k], self.c_out, k);
        gemm(
            Mat::strided(&self.padded, m, k, c, 1),
            w.t(),
            T::zero(),
            &mut full,
            self.c_out,
        );
        let bias = &p[self.bias_offset()..];
        let mut out = Tensor::zeros(&[b, l, self.c_out]);
        for (bi, dst) in out.data_mut().chunks_exact_mut(l * self.c_out).enumerate() {
            dst.copy_from_slice(&full[bi * lp * self.c_out..(bi * lp + l) * self.c_out]);
            for row in dst.chunks_exact_mut(self.c_out) {
                for (v, &bb) in row.iter_mut().zip(bias) {
                    *v = *v + bb;
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        p: &[T],
        g: &mut [T],
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (b, l) = self.dims;
        let (c_in, c_out) = (self.c_in, self.c_out);
        if dy.shape() != [b, l, c_out] {
            return Err(invalid(format!(
                "conv1d gradient shape {:?} does not match the forward pass",
                dy.shape()
            )));
        }
        let lp = l + 2;
        let k = KERNEL * c_in;
        let m = b * lp - 2;
        // dY laid out like the padded input: row b*lp + t + 1 holds dy[b, t].
        let mut q = vec![T::zero(); b * lp * c_out];
        for (bi, src) in dy.data().chunks_exact(l * c_out).enumerate() {
            q[(bi * lp + 1) * c_out..(bi * lp + 1 + l) * c_out].copy_from_slice(src);
        }
        // Output position (b, t) reads padded rows starting at b*lp + t, which is q's row + 1.
        let dya = Mat::new(&q[c_out..c_out + m * c_out], m, c_out);
        let (gw, gb) = g.split_at_mut(self.bias_offset());
        gemm(
            dya.t(),
            Mat::strided(&self.padded, m, k, c_in, 1),
            T::one(),
            gw,
            k,
        );
        for row in dy.data().chunks_exact(c_out) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        if !need_dx {
            return Ok(None);
        }
        // dx[b, t] = sum_j q[b*lp + t + j] * w[:, 2 - j, :]
        let mut flipped = vec![T::zero(); KERNEL * c_out * c_in];
        for j in 0..KERNEL {
            for o in 0..c_out {
                let src = &p[(o * KERNEL + (KERNEL - 1 - j)) * c_in..][..c_in];
                flipped[(j * c_out + o) * c_in..][..c_in].copy_from_slice(src);
            }
        }
        let mut full = vec![T::zero(); b * lp * c_in];
        gemm(
            Mat::strided(&q, m, KERNEL * c_out, c_out, 1),
            Mat::new(&flipped, KERNEL * c_out, c_in),
            T::zero(),
            &mut full,
            c_in,
        );
        let mut dx = Tensor::zeros(&[b, l, c_in]);
        for (bi, dst) in dx.data_mut().chunks_exact_mut(l * c_in).enumerate() {
            dst.copy_from_slice(&full[bi * lp * c_in..(bi * lp + l) * c_in]);
        }
        Ok(Some(dx))
    }
}
