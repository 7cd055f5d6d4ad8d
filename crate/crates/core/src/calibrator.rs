//! The Conv1d + LSTM error-compensation network: assembly, sliding-window
//! datasets, training against the ideal converter, and streaming inference.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adc::AdcCapture;
use crate::container::Container;
use crate::error::{invalid, Error, Result};
use crate::nn::{mse_loss, Layer, LayerSpec, Network, Optimizer, OptimizerKind, Tensor};
use crate::par;

/// Which samples the network sees for each corrected output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_length: usize,
    /// Position of the corrected sample inside the window.
    pub current_index: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_length: 64,
            current_index: 31,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 3 || self.current_index >= self.window_length {
            return Err(Error::Config(format!(
                "window needs length >= 3 and current_index < length, got {} / {}",
                self.window_length, self.current_index
            )));
        }
        Ok(())
    }

    /// Future samples that must be buffered before an output can be produced.
    pub fn latency_samples(&self) -> usize {
        self.window_length - 1 - self.current_index
    }
}

/// The layer stack: two conv blocks, three stacked LSTMs, one linear readout.
pub fn table1_specs(window_length: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    let conv = |c_in, c_out| {
        [
            Conv1d { c_in, c_out },
            BatchNorm1d { channels: c_out },
            Relu,
        ]
    };
    let mut s = Vec::new();
    s.extend(conv(1, 64));
    s.extend(conv(64, 64));
    s.extend(conv(64, 128));
    s.extend(conv(128, 128));
    s.push(Lstm {
        input: 128,
        hidden: 64,
    });
    s.push(Lstm {
        input: 64,
        hidden: 32,
    });
    s.push(Lstm {
        input: 32,
        hidden: 4,
    });
    s.push(Flatten);
    s.push(Linear {
        input: window_length * 4,
        output: 1,
    });
    s
}

/// Closed-form parameter count of [`table1_specs`].
pub fn table1_param_count(window_length: usize) -> usize {
    let conv = |i: usize, o: usize| o * (i * 3 + 1);
    let bn = |c: usize| 2 * c;
    let lstm = |i: usize, h: usize| 4 * (i * h + h * h + h);
    conv(1, 64)
        + conv(64, 64)
        + conv(64, 128)
        + conv(128, 128)
        + bn(64)
        + bn(64)
        + bn(128)
        + bn(128)
        + lstm(128, 64)
        + lstm(64, 32)
        + lstm(32, 4)
        + window_length * 4
        + 1
}

/// A trained (or freshly initialised) network plus everything needed to apply it to codes.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub network: Network<f32>,
    pub window: WindowConfig,
    /// Codes are divided by this before entering the network.
    pub code_scale: f64,
    pub resolution_bits: u32,
}

pub fn build_network(
    window: WindowConfig,
    resolution_bits: u32,
    seed: u64,
) -> Result<NetworkModel> {
    window.validate()?;
    let network = Network::seeded(&table1_specs(window.window_length), seed);
    let expected = table1_param_count(window.window_length);
    if network.param_count() != expected {
        return Err(Error::Numeric(format!(
            "network has {} parameters, closed form says {expected}",
            network.param_count()
        )));
    }
    Ok(NetworkModel {
        network,
        window,
        code_scale: 2f64.powi(resolution_bits as i32 - 1),
        resolution_bits,
    })
}

/// Anything that maps a batch of normalised windows to corrected samples.
pub trait Predictor: Sync {
    fn window(&self) -> WindowConfig;
    fn code_scale(&self) -> f64;
    /// `windows` holds `n` rows of `window_length` values.
    fn predict(&self, windows: &[f32], n: usize) -> Result<Vec<f32>>;
}

impl Predictor for NetworkModel {
    fn window(&self) -> WindowConfig {
        self.window
    }

    fn code_scale(&self) -> f64 {
        self.code_scale
    }

    fn predict(&self, windows: &[f32], n: usize) -> Result<Vec<f32>> {
        let mut net = self.network.clone();
        let x = Tensor::new(&[n, self.window.window_length, 1], windows.to_vec())?;
        let y = net.forward(&x, false)?;
        if !y.all_finite() {
            return Err(Error::Numeric(
                "network produced a non-finite output".into(),
            ));
        }
        Ok(y.into_data())
    }
}

impl NetworkModel {
    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("model");
        c.set("window_length", self.window.window_length);
        c.set("current_index", self.window.current_index);
        c.set("code_scale", self.code_scale);
        c.set("resolution_bits", self.resolution_bits);
        c.set("param_count", self.param_count());
        let specs = self.network.specs();
        c.set("layer_count", specs.len());
        for (i, spec) in specs.iter().enumerate() {
            c.set(&format!("layer.{i}"), spec);
            for (name, shape) in spec.tensors() {
                let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                c.set(&format!("tensor.{i}.{name}"), dims.join("x"));
            }
            c.push_f32(self.network.layer_params(i).iter().copied());
            if let Layer::BatchNorm1d(bn) = &self.network.layers()[i] {
                c.set(&format!("tensor.{i}.running_mean"), bn.channels);
                c.set(&format!("tensor.{i}.running_var"), bn.channels);
                c.set(&format!("bn.{i}.updates"), bn.updates);
                c.push_f32(bn.running_mean.iter().copied());
                c.push_f32(bn.running_var.iter().copied());
            }
        }
        c.set("payload", "f32 tensors in header order");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("model")?;
        let window = WindowConfig {
            window_length: c.parse("window_length")?,
            current_index: c.parse("current_index")?,
        };
        window
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        let n_layers: usize = c.parse("layer_count")?;
        let specs = (0..n_layers)
            .map(|i| c.require(&format!("layer.{i}"))?.parse())
            .collect::<Result<Vec<LayerSpec>>>()?;
        let mut network = Network::new(&specs);
        let mut offset = 0;
        for (i, spec) in specs.iter().enumerate() {
            let n = spec.param_count();
            let values = c.read_f32(offset, n)?;
            network.layer_params_mut(i).copy_from_slice(&values);
            offset += 4 * n;
            if let Layer::BatchNorm1d(bn) = &mut network.layers_mut()[i] {
                let ch = bn.channels;
                bn.running_mean = c.read_f32(offset, ch)?;
                bn.running_var = c.read_f32(offset + 4 * ch, ch)?;
                bn.updates = c.parse(&format!("bn.{i}.updates"))?;
                offset += 8 * ch;
            }
        }
        if network.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("model holds non-finite weights".into()));
        }
        Ok(NetworkModel {
            network,
            window,
            code_scale: c.parse("code_scale")?,
            resolution_bits: c.parse("resolution_bits")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Sliding windows over one or more captures.
///
/// Windows are stored implicitly as `(stream, start)` pairs into the normalised
/// non-ideal streams; every window is a contiguous slice of its stream.
#[derive(Debug, Clone, Default)]
pub struct WindowDataset {
    pub window: WindowConfig,
    pub code_scale: f64,
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
    labels: Vec<usize>,
    index: Vec<(u32, u32)>,
    /// Seed of the last shuffle, if any.
    pub shuffle_seed: Option<u64>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn window_at(&self, i: usize) -> &[f32] {
        let (s, j) = self.index[i];
        &self.inputs[s as usize][j as usize..j as usize + self.window.window_length]
    }

    pub fn target_at(&self, i: usize) -> f32 {
        let (s, j) = self.index[i];
        self.targets[s as usize][j as usize + self.window.current_index]
    }

    /// Constellation order of the capture window `i` came from.
    pub fn label_at(&self, i: usize) -> usize {
        self.labels[self.index[i].0 as usize]
    }

    /// Copies windows `ids` into a dense `[n, window_length]` buffer plus targets.
    pub fn gather(&self, ids: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(ids.len() * self.window.window_length);
        let mut y = Vec::with_capacity(ids.len());
        for &i in ids {
            x.extend_from_slice(self.window_at(i));
            y.push(self.target_at(i));
        }
        (x, y)
    }

    /// Concatenates datasets built with the same window and scale.
    pub fn merge(parts: Vec<WindowDataset>) -> Result<Self> {
        let mut out = WindowDataset::default();
        for (k, p) in parts.into_iter().enumerate() {
            if k == 0 {
                out.window = p.window;
                out.code_scale = p.code_scale;
            } else if p.window != out.window || p.code_scale != out.code_scale {
                return Err(invalid(
                    "cannot merge datasets with different windows or scales",
                ));
            }
            let base = out.inputs.len() as u32;
            out.index
                .extend(p.index.iter().map(|&(s, j)| (s + base, j)));
            out.inputs.extend(p.inputs);
            out.targets.extend(p.targets);
            out.labels.extend(p.labels);
        }
        Ok(out)
    }

    /// Interleaves windows from all captures in a seeded random order.
    pub fn shuffle(&mut self, seed: u64) {
        self.index.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.shuffle_seed = Some(seed);
    }

    /// Keeps only the first `n` windows.
    pub fn truncate(&mut self, n: usize) {
        self.index.truncate(n);
    }
}

/// One window per aggregate sample position `j`, covering `[j, j + window_length)`.
pub fn make_windows(capture: &AdcCapture, window: WindowConfig) -> Result<WindowDataset> {
    window.validate()?;
    let n = capture.len();
    if n < window.window_length {
        return Err(invalid(format!(
            "capture of {n} samples is shorter than one {}-sample window",
            window.window_length
        )));
    }
    if n > u32::MAX as usize {
        return Err(invalid("capture too long for the window index"));
    }
    let scale = capture.config.code_scale();
    let norm =
        |codes: &[i16]| -> Vec<f32> { codes.iter().map(|&c| (c as f64 / scale) as f32).collect() };
    Ok(WindowDataset {
        window,
        code_scale: scale,
        inputs: vec![norm(&capture.nonideal_codes)],
        targets: vec![norm(&capture.ideal_codes)],
        labels: vec![capture.source.constellation_order],
        index: (0..=(n - window.window_length) as u32)
            .map(|j| (0, j))
            .collect(),
        shuffle_seed: None,
    })
}

/// Windows from several captures, built in parallel and shuffled together.
pub fn make_mixed_windows(
    captures: &[AdcCapture],
    window: WindowConfig,
    seed: u64,
) -> Result<WindowDataset> {
    let parts = par::map_indexed(captures.len(), |i| make_windows(&captures[i], window));
    let mut ds = WindowDataset::merge(parts.into_iter().collect::<Result<Vec<_>>>()?)?;
    ds.shuffle(seed);
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 7,
            optimizer: OptimizerKind::Adam,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Equals the training loss when no validation split was held out.
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub config: TrainConfig,
    pub total_seconds: f64,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:e},{:e},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            ));
        }
        s
    }
}

/// Mean squared error of `model` over dataset windows `ids`, inference mode.
pub fn evaluate_loss(model: &impl Predictor, ds: &WindowDataset, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Err(invalid("no windows to evaluate"));
    }
    const CHUNK: usize = 512;
    let chunks: Vec<&[usize]> = ids.chunks(CHUNK).collect();
    let sums = par::map_indexed(chunks.len(), |k| -> Result<f64> {
        let (x, y) = ds.gather(chunks[k]);
        let pred = model.predict(&x, chunks[k].len())?;
        Ok(pred
            .iter()
            .zip(&y)
            .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
            .sum())
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / ids.len() as f64)
}

/// Minimises MSE to the ideal samples; returns the model with the lowest
/// validation loss seen at the end of any epoch.
///
/// `init` continues from an existing model; `on_epoch` sees each epoch's stats.
pub fn train(
    ds: &WindowDataset,
    cfg: &TrainConfig,
    init: Option<NetworkModel>,
    resolution_bits: u32,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(NetworkModel, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut model = match init {
        Some(m) => {
            if m.window != ds.window || m.code_scale != ds.code_scale {
                return Err(invalid(
                    "model window or normalisation does not match the dataset",
                ));
            }
            m
        }
        None => build_network(ds.window, resolution_bits, cfg.seed)?,
    };
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_val = if ds.len() >= 2 {
        ((ds.len() as f64 * cfg.validation_fraction).round() as usize).min(ds.len() - 1)
    } else {
        0
    };
    let (val_ids, train_ids) = order.split_at(n_val);
    let mut train_ids = train_ids.to_vec();

    let mut opt = Optimizer::new(cfg.optimizer, model.param_count(), cfg.learning_rate);
    let mut best: Option<(f64, NetworkModel, usize)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let wl = ds.window.window_length;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let last_good = epoch.checked_sub(1).filter(|&e| e > 0);
        let diverged = |detail: String| Error::Diverged {
            epoch,
            last_good,
            detail,
        };
        train_ids.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in train_ids.chunks(cfg.batch_size) {
            let (x, y) = ds.gather(batch);
            let x = Tensor::new(&[batch.len(), wl, 1], x)?;
            let y = Tensor::new(&[batch.len(), 1], y)?;
            let loss = match model.network.train_step(&x, &y, &mut opt) {
                Ok(l) => l,
                Err(Error::Numeric(d)) => return Err(diverged(d)),
                Err(e) => return Err(e),
            };
            sum += loss as f64 * batch.len() as f64;
        }
        let train_loss = sum / train_ids.len() as f64;
        let val_loss = if val_ids.is_empty() {
            train_loss
        } else {
            match evaluate_loss(&model, ds, val_ids) {
                Ok(v) => v,
                Err(Error::Numeric(d)) => return Err(diverged(d)),
                Err(e) => return Err(e),
            }
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged(format!(
                "loss train {train_loss} / validation {val_loss}"
            )));
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, model.clone(), epoch));
        }
    }
    let (_, best_model, best_epoch) = best.expect("at least one epoch ran");
    let report = TrainReport {
        epochs,
        best_epoch,
        train_windows: train_ids.len(),
        val_windows: val_ids.len(),
        config: *cfg,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best_model, report))
}

/// Corrected samples for every position that has a full window around it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedStream {
    /// Input index of `values[0]`.
    pub first_index: usize,
    /// Normalised corrected samples.
    pub values: Vec<f64>,
}

impl CorrectedStream {
    /// Full-length stream with the uncovered edges taken from `fallback`.
    pub fn splice_into(&self, fallback: &[f64]) -> Vec<f64> {
        let mut out = fallback.to_vec();
        out[self.first_index..self.first_index + self.values.len()].copy_from_slice(&self.values);
        out
    }
}

const INFER_CHUNK: usize = 1024;

/// Applies the network to every full window of a code stream, batched and in parallel.
pub fn infer_stream(model: &impl Predictor, codes: &[i16]) -> Result<CorrectedStream> {
    let w = model.window();
    let wl = w.window_length;
    if codes.len() < wl {
        return Err(invalid(format!(
            "stream of {} samples is shorter than one window",
            codes.len()
        )));
    }
    let scale = model.code_scale();
    let x: Vec<f32> = codes.iter().map(|&c| (c as f64 / scale) as f32).collect();
    let n = codes.len() - wl + 1;
    let n_chunks = n.div_ceil(INFER_CHUNK);
    let parts = par::map_indexed(n_chunks, |k| -> Result<Vec<f32>> {
        let lo = k * INFER_CHUNK;
        let hi = (lo + INFER_CHUNK).min(n);
        let mut buf = Vec::with_capacity((hi - lo) * wl);
        for j in lo..hi {
            buf.extend_from_slice(&x[j..j + wl]);
        }
        model.predict(&buf, hi - lo)
    });
    let mut values = Vec::with_capacity(n);
    for p in parts {
        values.extend(p?.into_iter().map(f64::from));
    }
    Ok(CorrectedStream {
        first_index: w.current_index,
        values,
    })
}

/// Sample-at-a-time corrector: buffers future samples and emits one corrected
/// value per input once the window is full, `latency_samples` behind the input.
pub struct StreamCorrector<'a, P: Predictor> {
    model: &'a P,
    buffer: VecDeque<f32>,
}

impl<'a, P: Predictor> StreamCorrector<'a, P> {
    pub fn new(model: &'a P) -> Self {
        StreamCorrector {
            model,
            buffer: VecDeque::with_capacity(model.window().window_length),
        }
    }

    pub fn push(&mut self, code: i16) -> Result<Option<f64>> {
        let wl = self.model.window().window_length;
        self.buffer
            .push_back((code as f64 / self.model.code_scale()) as f32);
        if self.buffer.len() > wl {
            self.buffer.pop_front();
        }
        if self.buffer.len() < wl {
            return Ok(None);
        }
        let (a, b) = self.buffer.as_slices();
        let window = [a, b].concat();
        Ok(Some(self.model.predict(&window, 1)?[0] as f64))
    }
}

/// Loss of `model` over windows `ids` evaluated batch-by-batch in training mode
/// (batch statistics), as seen by the optimiser.
pub fn train_mode_loss(model: &mut NetworkModel, ds: &WindowDataset, ids: &[usize]) -> Result<f64> {
    let (x, y) = ds.gather(ids);
    let x = Tensor::new(&[ids.len(), ds.window.window_length, 1], x)?;
    let y = Tensor::new(&[ids.len(), 1], y)?;
    let pred = model.network.forward(&x, true)?;
    Ok(mse_loss(&pred, &y)?.0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_count_matches_layer_sum() {
        assert_eq!(table1_param_count(64), 150_033);
        let net = build_network(WindowConfig::default(), 13, 1).unwrap();
        assert_eq!(net.param_count(), 150_033);
    }

    #[test]
    fn latency_is_future_context() {
        assert_eq!(WindowConfig::default().latency_samples(), 32);
        assert!(WindowConfig {
            window_length: 8,
            current_index: 8
        }
        .validate()
        .is_err());
    }
}
