//! Post-training fixed-point emulation: batch norm folded into the preceding
//! convolution, symmetric per-tensor quantisation of weights and activations,
//! lookup-table gate nonlinearities, and a bit-width sweep.

use serde::{Deserialize, Serialize};

use crate::adc::AdcCapture;
use crate::calibrator::{infer_stream, NetworkModel, Predictor, WindowConfig};
use crate::error::{invalid, Error, Result};
use crate::metrics::{sndr_enob, Sndr};
use crate::nn::{gemm, sigmoid, tanh, Conv1d, Layer, LayerSpec, Linear, Mat, Tensor, BN_EPSILON};
use crate::par;

pub const MIN_BITS: u32 = 4;
pub const MAX_BITS: u32 = 24;
/// Inputs beyond these magnitudes saturate the gate lookup tables.
const SIGMOID_RANGE: f32 = 12.0;
const TANH_RANGE: f32 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub activation_bits: u32,
    /// Entries per gate lookup table.
    pub lut_size: usize,
}

impl Default for QuantScheme {
    fn default() -> Self {
        QuantScheme {
            weight_bits: 16,
            activation_bits: 16,
            lut_size: 256,
        }
    }
}

impl QuantScheme {
    pub fn uniform(bits: u32) -> Self {
        QuantScheme {
            weight_bits: bits,
            activation_bits: bits,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.weight_bits, self.activation_bits] {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(Error::Config(format!(
                    "bit width {b} outside [{MIN_BITS}, {MAX_BITS}]"
                )));
            }
        }
        if self.lut_size < 2 {
            return Err(Error::Config(
                "lookup tables need at least two entries".into(),
            ));
        }
        Ok(())
    }
}

/// Largest code magnitude of a symmetric `bits`-bit quantiser.
fn qmax(bits: u32) -> f32 {
    ((1u32 << (bits - 1)) - 1) as f32
}

/// Symmetric scale for `values`; `None` when the tensor is all zero.
pub fn symmetric_scale(values: &[f32], bits: u32) -> Option<f32> {
    let m = values.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    (m > 0.0).then(|| m / qmax(bits))
}

/// `round(x / s)` clamped to the code range, times `s`.
#[inline]
pub fn fake_quant(x: f32, scale: f32, bits: u32) -> f32 {
    let q = qmax(bits);
    (x / scale).round().clamp(-q, q) * scale
}

/// Linear interpolation over `n` samples of `f` on `[-range, range]`, saturating outside.
#[derive(Debug, Clone)]
pub struct Lut {
    range: f32,
    step: f32,
    table: Vec<f32>,
}

impl Lut {
    pub fn new(f: impl Fn(f64) -> f64, range: f32, n: usize) -> Self {
        let step = 2.0 * range / (n - 1) as f32;
        let table = (0..n)
            .map(|i| f(-range as f64 + i as f64 * step as f64) as f32)
            .collect();
        Lut { range, step, table }
    }

    #[inline]
    pub fn eval(&self, x: f32) -> f32 {
        let pos = ((x + self.range) / self.step).clamp(0.0, (self.table.len() - 1) as f32);
        let i = (pos as usize).min(self.table.len() - 2);
        let frac = pos - i as f32;
        self.table[i] + frac * (self.table[i + 1] - self.table[i])
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        layer: Conv1d<f32>,
        params: Vec<f32>,
    },
    Relu,
    Lstm {
        input: usize,
        hidden: usize,
        params: Vec<f32>,
    },
    Flatten,
    Linear {
        layer: Linear<f32>,
        params: Vec<f32>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv { .. } => "conv1d",
            Op::Relu => "relu",
            Op::Lstm { .. } => "lstm",
            Op::Flatten => "flatten",
            Op::Linear { .. } => "linear",
        }
    }

    /// Sizes and names of the parameter tensors, in storage order.
    fn tensors(&self) -> Vec<(&'static str, usize)> {
        let spec = match self {
            Op::Conv { layer, .. } => LayerSpec::Conv1d {
                c_in: layer.c_in,
                c_out: layer.c_out,
            },
            Op::Lstm { input, hidden, .. } => LayerSpec::Lstm {
                input: *input,
                hidden: *hidden,
            },
            Op::Linear { layer, .. } => LayerSpec::Linear {
                input: layer.input,
                output: layer.output,
            },
            Op::Relu | Op::Flatten => return Vec::new(),
        };
        spec.tensors()
            .into_iter()
            .map(|(n, shape)| (n, shape.iter().product()))
            .collect()
    }

    fn params(&self) -> Option<&[f32]> {
        match self {
            Op::Conv { params, .. } | Op::Lstm { params, .. } | Op::Linear { params, .. } => {
                Some(params)
            }
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<&mut Vec<f32>> {
        match self {
            Op::Conv { params, .. } | Op::Lstm { params, .. } | Op::Linear { params, .. } => {
                Some(params)
            }
            _ => None,
        }
    }
}

/// Per-op quantisation state used during a forward pass.
struct QuantPlan<'a> {
    bits: u32,
    input_scale: f32,
    out_scales: &'a [f32],
    cell_scales: &'a [f32],
    sigmoid: &'a Lut,
    tanh: &'a Lut,
}

/// Max-abs statistics gathered during calibration.
#[derive(Debug, Clone, Default)]
struct Observed {
    input: f32,
    outputs: Vec<f32>,
    cells: Vec<f32>,
}

impl Observed {
    fn merge(&mut self, o: &Observed) {
        self.input = self.input.max(o.input);
        for (a, b) in self.outputs.iter_mut().zip(&o.outputs) {
            *a = a.max(*b);
        }
        for (a, b) in self.cells.iter_mut().zip(&o.cells) {
            *a = a.max(*b);
        }
    }
}

fn max_abs(v: &[f32]) -> f32 {
    v.iter().fold(0.0f32, |a, x| a.max(x.abs()))
}

/// Batch-norm-free float network in inference form.
#[derive(Debug, Clone)]
pub struct FoldedModel {
    ops: Vec<Op>,
    window: WindowConfig,
    code_scale: f64,
}

impl FoldedModel {
    /// Folds each batch norm's running statistics into the convolution before it.
    pub fn from_model(model: &NetworkModel) -> Result<Self> {
        let net = &model.network;
        let layers = net.layers();
        let mut ops: Vec<Op> = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let p = net.layer_params(i);
            match layer {
                Layer::Conv1d(c) => ops.push(Op::Conv {
                    layer: Conv1d::new(c.c_in, c.c_out),
                    params: p.to_vec(),
                }),
                Layer::BatchNorm1d(bn) => {
                    if bn.updates == 0 {
                        return Err(Error::UninitializedStatistics);
                    }
                    let Some(Op::Conv {
                        layer: conv,
                        params,
                    }) = ops.last_mut()
                    else {
                        return Err(invalid("batch norm must follow a convolution to be folded"));
                    };
                    let (gamma, beta) = p.split_at(bn.channels);
                    let per_out = conv.c_in * crate::nn::KERNEL;
                    let bias_at = conv.bias_offset();
                    for o in 0..bn.channels {
                        let s = gamma[o] as f64 / (bn.running_var[o] as f64 + BN_EPSILON).sqrt();
                        for w in &mut params[o * per_out..(o + 1) * per_out] {
                            *w = (*w as f64 * s) as f32;
                        }
                        let b = params[bias_at + o] as f64;
                        params[bias_at + o] =
                            ((b - bn.running_mean[o] as f64) * s + beta[o] as f64) as f32;
                    }
                }
                Layer::Relu(_) => ops.push(Op::Relu),
                Layer::Lstm(l) => ops.push(Op::Lstm {
                    input: l.input,
                    hidden: l.hidden,
                    params: p.to_vec(),
                }),
                Layer::Flatten(_) => ops.push(Op::Flatten),
                Layer::Linear(l) => ops.push(Op::Linear {
                    layer: Linear::new(l.input, l.output),
                    params: p.to_vec(),
                }),
            }
        }
        Ok(FoldedModel {
            ops,
            window: model.window,
            code_scale: model.code_scale,
        })
    }

    fn forward(
        &self,
        windows: &[f32],
        n: usize,
        plan: Option<&QuantPlan>,
        observe: Option<&mut Observed>,
    ) -> Result<Vec<f32>> {
        let wl = self.window.window_length;
        let mut x = Tensor::new(&[n, wl, 1], windows.to_vec())?;
        let mut obs = observe;
        if let Some(o) = obs.as_deref_mut() {
            o.input = o.input.max(max_abs(x.data()));
            o.outputs.resize(self.ops.len(), 0.0);
            o.cells.resize(self.ops.len(), 0.0);
        }
        if let Some(q) = plan {
            x.data_mut()
                .iter_mut()
                .for_each(|v| *v = fake_quant(*v, q.input_scale, q.bits));
        }
        for (k, op) in self.ops.iter().enumerate() {
            x = match op {
                Op::Conv { layer, params } => layer.clone().forward(params, &x)?,
                Op::Relu => {
                    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    x
                }
                Op::Lstm {
                    input,
                    hidden,
                    params,
                } => {
                    let cell_max =
                        lstm_forward(params, *input, *hidden, &mut x, plan.map(|q| (q, k)))?;
                    if let Some(o) = obs.as_deref_mut() {
                        o.cells[k] = o.cells[k].max(cell_max);
                    }
                    x
                }
                Op::Flatten => {
                    let s = x.shape().to_vec();
                    x.reshape(&[s[0], s[1] * s[2]])?
                }
                Op::Linear { layer, params } => layer.clone().forward(params, &x)?,
            };
            if let Some(o) = obs.as_deref_mut() {
                o.outputs[k] = o.outputs[k].max(max_abs(x.data()));
            }
            if let Some(q) = plan {
                let s = q.out_scales[k];
                x.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = fake_quant(*v, s, q.bits));
            }
        }
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite output in folded network".into()));
        }
        Ok(x.into_data())
    }
}

impl FoldedModel {
    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    /// Parameters of op `k`, tensors concatenated in storage order.
    pub fn op_params(&self, k: usize) -> Option<&[f32]> {
        self.ops[k].params()
    }
}

impl Predictor for FoldedModel {
    fn window(&self) -> WindowConfig {
        self.window
    }

    fn code_scale(&self) -> f64 {
        self.code_scale
    }

    fn predict(&self, windows: &[f32], n: usize) -> Result<Vec<f32>> {
        self.forward(windows, n, None, None)
    }
}

type Activation<'a> = Box<dyn Fn(f32) -> f32 + 'a>;

/// LSTM inference over `x` (`[b, t, in]`, replaced by `[b, t, h]`). With a plan,
/// gates go through the lookup tables and the cell and hidden states are
/// quantised every step. Returns the largest cell magnitude seen.
fn lstm_forward(
    p: &[f32],
    input: usize,
    h: usize,
    x: &mut Tensor<f32>,
    plan: Option<(&QuantPlan, usize)>,
) -> Result<f32> {
    let (b, t) = (x.shape()[0], x.shape()[1]);
    if x.shape()[2] != input {
        return Err(invalid("lstm input width mismatch"));
    }
    let g4 = 4 * h;
    let (w_ih, rest) = p.split_at(g4 * input);
    let (w_hh, bias) = rest.split_at(g4 * h);
    // time-major input
    let mut xt = Vec::with_capacity(b * t * input);
    for s in 0..t {
        for bi in 0..b {
            xt.extend_from_slice(&x.data()[(bi * t + s) * input..(bi * t + s + 1) * input]);
        }
    }
    let mut gates = bias.repeat(b * t);
    gemm(
        Mat::new(&xt, b * t, input),
        Mat::new(w_ih, g4, input).t(),
        1.0,
        &mut gates,
        g4,
    );
    let (sig, th): (Activation, Activation) = match plan {
        Some((q, _)) => (
            Box::new(|v| q.sigmoid.eval(v)),
            Box::new(|v| q.tanh.eval(v)),
        ),
        None => (Box::new(sigmoid::<f32>), Box::new(tanh::<f32>)),
    };
    let quant = |v: f32, s: f32| match plan {
        Some((q, _)) => fake_quant(v, s, q.bits),
        None => v,
    };
    let (cell_scale, h_scale) = match plan {
        Some((q, k)) => (q.cell_scales[k], q.out_scales[k]),
        None => (1.0, 1.0),
    };
    let mut c = vec![0.0f32; b * h];
    let mut hs = vec![0.0f32; b * h];
    let mut out = vec![0.0f32; b * t * h];
    let mut cell_max = 0.0f32;
    for s in 0..t {
        let blk = &mut gates[s * b * g4..(s + 1) * b * g4];
        if s > 0 {
            gemm(Mat::new(&hs, b, h), Mat::new(w_hh, g4, h).t(), 1.0, blk, g4);
        }
        for bi in 0..b {
            let g = &blk[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let i = sig(g[j]);
                let f = sig(g[h + j]);
                let gg = th(g[2 * h + j]);
                let o = sig(g[3 * h + j]);
                let cv = quant(f * c[bi * h + j] + i * gg, cell_scale);
                cell_max = cell_max.max(cv.abs());
                c[bi * h + j] = cv;
                let hv = quant(o * th(cv), h_scale);
                hs[bi * h + j] = hv;
                out[(bi * t + s) * h + j] = hv;
            }
        }
    }
    *x = Tensor::new(&[b, t, h], out)?;
    Ok(cell_max)
}

/// A folded network with fake-quantised weights and activation scales.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    folded: FoldedModel,
    pub scheme: QuantScheme,
    pub input_scale: f32,
    /// `(op.layer.tensor, scale)` for every parameter tensor.
    pub weight_scales: Vec<(String, f32)>,
    pub output_scales: Vec<f32>,
    pub cell_scales: Vec<f32>,
    /// Tensors that were identically zero and fell back to scale 1.
    pub zero_tensors: Vec<String>,
    sigmoid: Lut,
    tanh: Lut,
}

impl QuantizedModel {
    /// Dequantised parameters of op `k`, tensors concatenated in storage order.
    pub fn op_params(&self, k: usize) -> Option<&[f32]> {
        self.folded.op_params(k)
    }
}

impl Predictor for QuantizedModel {
    fn window(&self) -> WindowConfig {
        self.folded.window
    }

    fn code_scale(&self) -> f64 {
        self.folded.code_scale
    }

    fn predict(&self, windows: &[f32], n: usize) -> Result<Vec<f32>> {
        let plan = QuantPlan {
            bits: self.scheme.activation_bits,
            input_scale: self.input_scale,
            out_scales: &self.output_scales,
            cell_scales: &self.cell_scales,
            sigmoid: &self.sigmoid,
            tanh: &self.tanh,
        };
        self.folded.forward(windows, n, Some(&plan), None)
    }
}

const CALIB_CHUNK: usize = 512;

/// Folds, quantises the weights, and sets activation scales from the max-abs
/// values seen over `calib_windows` (`n` rows of `window_length`).
pub fn calibrate_and_quantize(
    model: &NetworkModel,
    scheme: QuantScheme,
    calib_windows: &[f32],
    n: usize,
) -> Result<QuantizedModel> {
    scheme.validate()?;
    let wl = model.window.window_length;
    if n < 1000 || calib_windows.len() != n * wl {
        return Err(invalid(format!(
            "calibration needs at least 1000 whole windows, got {n}"
        )));
    }
    let folded_float = FoldedModel::from_model(model)?;
    let chunks = n.div_ceil(CALIB_CHUNK);
    let observed = par::map_indexed(chunks, |k| -> Result<Observed> {
        let lo = k * CALIB_CHUNK;
        let hi = (lo + CALIB_CHUNK).min(n);
        let mut o = Observed::default();
        folded_float.forward(
            &calib_windows[lo * wl..hi * wl],
            hi - lo,
            None,
            Some(&mut o),
        )?;
        Ok(o)
    });
    let mut stats = Observed::default();
    for (k, o) in observed.into_iter().enumerate() {
        let o = o?;
        if k == 0 {
            stats = o;
        } else {
            stats.merge(&o);
        }
    }
    let ab = scheme.activation_bits;
    let act_scale = |m: f32| if m > 0.0 { m / qmax(ab) } else { 1.0 };

    let mut folded = folded_float;
    let mut weight_scales = Vec::new();
    let mut zero_tensors = Vec::new();
    for (k, op) in folded.ops.iter_mut().enumerate() {
        let tensors = op.tensors();
        let name = op.name();
        let Some(params) = op.params_mut() else {
            continue;
        };
        let mut at = 0;
        for (tname, len) in tensors {
            let t = &mut params[at..at + len];
            at += len;
            let label = format!("{k}.{name}.{tname}");
            let s = symmetric_scale(t, scheme.weight_bits);
            if s.is_none() {
                zero_tensors.push(label.clone());
            }
            let sv = s.unwrap_or(1.0);
            t.iter_mut()
                .for_each(|w| *w = fake_quant(*w, sv, scheme.weight_bits));
            weight_scales.push((label, sv));
        }
    }
    Ok(QuantizedModel {
        folded,
        scheme,
        input_scale: act_scale(stats.input),
        weight_scales,
        output_scales: stats.outputs.iter().map(|&m| act_scale(m)).collect(),
        cell_scales: stats.cells.iter().map(|&m| act_scale(m)).collect(),
        zero_tensors,
        sigmoid: Lut::new(|x| 1.0 / (1.0 + (-x).exp()), SIGMOID_RANGE, scheme.lut_size),
        tanh: Lut::new(f64::tanh, TANH_RANGE, scheme.lut_size),
    })
}

/// One row of the bit-width sweep; `bits == 0` is the float model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub bits: u32,
    pub sndr: Sndr,
    /// Mean squared error against the ideal samples (normalised units).
    pub mse: f64,
    /// Largest deviation from the float model's output (normalised units).
    pub max_abs_error: f64,
}

/// Quantises at each width in `bits`, calibrating on `calib_windows`, and scores
/// the corrected `eval` capture against its ideal samples.
pub fn sweep_bitwidths(
    model: &NetworkModel,
    bits: &[u32],
    lut_size: usize,
    calib_windows: &[f32],
    n_calib: usize,
    eval: &AdcCapture,
) -> Result<Vec<SweepRow>> {
    if bits.is_empty() {
        return Err(invalid("bit list is empty"));
    }
    let ideal = eval.normalize(&eval.ideal_codes);
    let raw = eval.normalize(&eval.nonideal_codes);
    let float = infer_stream(model, &eval.nonideal_codes)?;
    let score = |stream: &crate::calibrator::CorrectedStream, b: u32| -> Result<SweepRow> {
        let full = stream.splice_into(&raw);
        let sndr = sndr_enob(&ideal, &full)?;
        let lo = stream.first_index;
        let hi = lo + stream.values.len();
        let mse = ideal[lo..hi]
            .iter()
            .zip(&stream.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / (hi - lo) as f64;
        let max_abs_error = stream
            .values
            .iter()
            .zip(&float.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(SweepRow {
            bits: b,
            sndr,
            mse,
            max_abs_error,
        })
    };
    let mut rows = vec![score(&float, 0)?];
    for &b in bits {
        let scheme = QuantScheme {
            weight_bits: b,
            activation_bits: b,
            lut_size,
        };
        let q = calibrate_and_quantize(model, scheme, calib_windows, n_calib)?;
        rows.push(score(&infer_stream(&q, &eval.nonideal_codes)?, b)?);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("bits,enob_bits,sndr_db,mse_norm2,max_abs_error_norm\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.4},{:.3},{:e},{:e}\n",
            r.bits, r.sndr.enob, r.sndr.sndr_db, r.mse, r.max_abs_error
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fake_quant_error_is_at_most_half_a_step() {
        let w = [0.3f32, -1.7, 0.001, 2.5, -2.5];
        let s = symmetric_scale(&w, 8).unwrap();
        for &v in &w {
            assert!((fake_quant(v, s, 8) - v).abs() <= s / 2.0 + 1e-7);
        }
        assert_eq!(symmetric_scale(&[0.0; 4], 8), None);
    }

    #[test]
    fn lut_interpolates_and_saturates() {
        let l = Lut::new(f64::tanh, 6.0, 256);
        for i in -600..600 {
            let x = i as f32 * 0.01;
            assert!((l.eval(x) - x.tanh()).abs() < 5e-4, "{x}");
        }
        assert!((l.eval(100.0) - 6f32.tanh()).abs() < 1e-6);
        assert!((l.eval(-100.0) + 6f32.tanh()).abs() < 1e-6);
    }

    #[test]
    fn scheme_bounds() {
        assert!(QuantScheme::uniform(3).validate().is_err());
        assert!(QuantScheme::uniform(25).validate().is_err());
        assert!(QuantScheme::uniform(8).validate().is_ok());
    }
}
