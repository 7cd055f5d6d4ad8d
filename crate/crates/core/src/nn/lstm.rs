use rand::Rng;

use super::tensor::{gemm, Mat, Scalar, Tensor};
use super::uniform_init;
use crate::error::{invalid, Result};

#[inline(always)]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

/// `tanh` through one `exp`; much cheaper than libm's `tanhf`.
#[inline(always)]
pub(crate) fn tanh<T: Scalar>(x: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((two * x).fast_exp() + T::one())
}

/// Applies the gate nonlinearities to one `[4h]` row in place.
#[inline]
fn activate_gates<T: Scalar>(row: &mut [T], h: usize) {
    let (sig_if, rest) = row.split_at_mut(2 * h);
    let (g, o) = rest.split_at_mut(h);
    for v in sig_if.iter_mut().chain(o.iter_mut()) {
        *v = sigmoid(*v);
    }
    for v in g {
        *v = tanh(*v);
    }
}

/// `[a, b, c]` to `[b, a, c]`.
fn swap01<T: Copy>(src: &[T], a: usize, b: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&src[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    out
}

/// Single-layer LSTM over `[batch, time, features]`, zero initial state.
///
/// Parameters: `w_ih [4h, in]`, `w_hh [4h, h]`, `bias [4h]`, gate blocks in
/// the order input, forget, cell, output. Caches are time-major so that each
/// recurrent step touches one contiguous block.
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    pub input: usize,
    pub hidden: usize,
    /// Input, `[t, b, in]`.
    x: Vec<T>,
    /// Post-activation gates, `[t, b, 4h]`.
    gates: Vec<T>,
    cell: Vec<T>,
    tanh_cell: Vec<T>,
    /// Hidden state shifted one step, `[t, b, h]`: `h_prev[s] = h[s - 1]`, zero at `s = 0`.
    h_prev: Vec<T>,
    dims: (usize, usize),
}

impl<T: Scalar> Lstm<T> {
    pub fn new(input: usize, hidden: usize) -> Self {
        Lstm {
            input,
            hidden,
            x: Vec::new(),
            gates: Vec::new(),
            cell: Vec::new(),
            tanh_cell: Vec::new(),
            h_prev: Vec::new(),
            dims: (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let g = 4 * self.hidden;
        (0, g * self.input, g * (self.input + self.hidden))
    }

    pub fn init(&self, p: &mut [T], rng: &mut impl Rng) {
        let (_, _, ob) = self.offsets();
        uniform_init(&mut p[..ob], self.hidden, rng);
        let h = self.hidden;
        let bias = &mut p[ob..];
        bias.fill(T::zero());
        bias[h..2 * h].fill(T::one());
    }

    pub fn forward(&mut self, p: &[T], x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "lstm")?;
        let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if f != self.input {
            return Err(invalid(format!(
                "lstm expects {} features, got {f}",
                self.input
            )));
        }
        let h = self.hidden;
        let g4 = 4 * h;
        let (ow, oh, ob) = self.offsets();
        let w_ih = Mat::new(&p[ow..oh], g4, f);
        let w_hh = Mat::new(&p[oh..ob], g4, h);
        let bias = &p[ob..ob + g4];

        self.x = swap01(x.data(), b, t, f);
        self.dims = (b, t);
        self.gates = bias.repeat(b * t);
        gemm(
            Mat::new(&self.x, b * t, f),
            w_ih.t(),
            T::one(),
            &mut self.gates,
            g4,
        );
        self.cell = vec![T::zero(); b * t * h];
        self.tanh_cell = vec![T::zero(); b * t * h];
        self.h_prev = vec![T::zero(); b * t * h];
        let mut hseq = vec![T::zero(); b * t * h];
        for s in 0..t {
            let blk = s * b;
            if s > 0 {
                let hp = Mat::new(&self.h_prev[blk * h..(blk + b) * h], b, h);
                gemm(
                    hp,
                    w_hh.t(),
                    T::one(),
                    &mut self.gates[blk * g4..(blk + b) * g4],
                    g4,
                );
            }
            for r in blk..blk + b {
                let gate = &mut self.gates[r * g4..(r + 1) * g4];
                activate_gates(gate, h);
                let (i, rest) = gate.split_at(h);
                let (fg, rest) = rest.split_at(h);
                let (gg, o) = rest.split_at(h);
                let (done, now) = self.cell.split_at_mut(r * h);
                let c = &mut now[..h];
                if s > 0 {
                    let c_prev = &done[(r - b) * h..(r - b + 1) * h];
                    for j in 0..h {
                        c[j] = fg[j] * c_prev[j] + i[j] * gg[j];
                    }
                } else {
                    for j in 0..h {
                        c[j] = i[j] * gg[j];
                    }
                }
                let tc = &mut self.tanh_cell[r * h..(r + 1) * h];
                let hv = &mut hseq[r * h..(r + 1) * h];
                for j in 0..h {
                    tc[j] = tanh(c[j]);
                    hv[j] = o[j] * tc[j];
                }
            }
            if s + 1 < t {
                self.h_prev[(blk + b) * h..(blk + 2 * b) * h]
                    .copy_from_slice(&hseq[blk * h..(blk + b) * h]);
            }
        }
        Tensor::new(&[b, t, h], swap01(&hseq, t, b, h))
    }

    pub fn backward(
        &mut self,
        p: &[T],
        g: &mut [T],
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (b, t) = self.dims;
        let (h, f) = (self.hidden, self.input);
        if dy.shape() != [b, t, h] {
            return Err(invalid(format!(
                "lstm gradient shape {:?} does not match the forward pass",
                dy.shape()
            )));
        }
        let g4 = 4 * h;
        let (ow, oh, ob) = self.offsets();
        let w_hh = Mat::new(&p[oh..ob], g4, h);
        let dy = swap01(dy.data(), b, t, h);
        // Pre-activation gate gradients, `[t, b, 4h]`.
        let mut da = vec![T::zero(); b * t * g4];
        let mut dh_next = vec![T::zero(); b * h];
        let mut dc_next = vec![T::zero(); b * h];
        let one = T::one();
        for s in (0..t).rev() {
            let blk = s * b;
            for bi in 0..b {
                let r = blk + bi;
                let gate = &self.gates[r * g4..(r + 1) * g4];
                let d = &mut da[r * g4..(r + 1) * g4];
                for j in 0..h {
                    let (i, fg, gg, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                    let tc = self.tanh_cell[r * h + j];
                    let dh = dy[r * h + j] + dh_next[bi * h + j];
                    let dc = dh * o * (one - tc * tc) + dc_next[bi * h + j];
                    let c_prev = if s > 0 {
                        self.cell[(r - b) * h + j]
                    } else {
                        T::zero()
                    };
                    d[j] = dc * gg * i * (one - i);
                    d[h + j] = dc * c_prev * fg * (one - fg);
                    d[2 * h + j] = dc * i * (one - gg * gg);
                    d[3 * h + j] = dh * tc * o * (one - o);
                    dc_next[bi * h + j] = dc * fg;
                }
            }
            if s > 0 {
                let ds = Mat::new(&da[blk * g4..(blk + b) * g4], b, g4);
                gemm(ds, w_hh, T::zero(), &mut dh_next, h);
            }
        }
        let dam = Mat::new(&da, b * t, g4);
        gemm(
            dam.t(),
            Mat::new(&self.x, b * t, f),
            T::one(),
            &mut g[ow..oh],
            f,
        );
        gemm(
            dam.t(),
            Mat::new(&self.h_prev, b * t, h),
            T::one(),
            &mut g[oh..ob],
            h,
        );
        let gb = &mut g[ob..ob + g4];
        for row in da.chunks_exact(g4) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        if !need_dx {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); b * t * f];
        gemm(dam, Mat::new(&p[ow..oh], g4, f), T::zero(), &mut dx, f);
        Tensor::new(&[b, t, f], swap01(&dx, t, b, f)).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_and_bias_gives_zero_sequence() {
        let mut l = Lstm::<f64>::new(3, 4);
        let mut p: Vec<f64> = (0..l.param_count())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let (_, _, ob) = l.offsets();
        p[ob..].fill(0.0);
        let y = l.forward(&p, &Tensor::zeros(&[2, 6, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_unit_one_step_matches_hand_arithmetic() {
        let mut l = Lstm::<f64>::new(1, 1);
        // w_ih = [0.5, -0.3, 0.8, 0.2], w_hh unused at t = 0, bias = [0.1, 1.0, -0.2, 0.05]
        let p = vec![
            0.5, -0.3, 0.8, 0.2, 9.0, 9.0, 9.0, 9.0, 0.1, 1.0, -0.2, 0.05,
        ];
        let x = 0.7;
        let y = l
            .forward(&p, &Tensor::new(&[1, 1, 1], vec![x]).unwrap())
            .unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.1);
        let g = (0.8 * x - 0.2).tanh();
        let o = sig(0.2 * x + 0.05);
        let expect = o * (i * g).tanh();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let l = Lstm::<f32>::new(2, 3);
        let mut p = vec![0.0; l.param_count()];
        l.init(&mut p, &mut rand::rng());
        let (_, _, ob) = l.offsets();
        assert_eq!(&p[ob..], &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }
}
