//! A small trainable-layer engine: kernel-3 convolution, batch norm, ReLU,
//! LSTM, linear, MSE and Adam, with hand-written backward passes.
//!
//! Activations are channels-last (`[batch, time, channels]`), so moving from
//! the convolutional stack to the recurrent one needs no transpose.

mod conv;
pub mod gradcheck;
mod linear;
mod lstm;
mod norm;
mod optim;
mod tensor;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use conv::{Conv1d, KERNEL};
pub use linear::{mse_loss, Linear, Relu};
pub use lstm::Lstm;
pub use norm::{BatchNorm1d, BN_EPSILON, BN_MOMENTUM};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Scalar, Tensor};

pub(crate) use lstm::{sigmoid, tanh};
pub(crate) use tensor::{gemm, Mat};

use crate::error::{Error, Result};

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_init<T: Scalar>(p: &mut [T], fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in p {
        *v = T::lit(rng.random_range(-bound..bound));
    }
}

/// Architecture of one layer, without its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d {
        c_in: usize,
        c_out: usize,
    },
    BatchNorm1d {
        channels: usize,
    },
    Relu,
    Lstm {
        input: usize,
        hidden: usize,
    },
    /// `[batch, a, b]` to `[batch, a * b]`.
    Flatten,
    Linear {
        input: usize,
        output: usize,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d { c_in, c_out } => c_out * (c_in * KERNEL + 1),
            LayerSpec::BatchNorm1d { channels } => 2 * channels,
            LayerSpec::Lstm { input, hidden } => 4 * (input * hidden + hidden * hidden + hidden),
            LayerSpec::Linear { input, output } => output * (input + 1),
            LayerSpec::Relu | LayerSpec::Flatten => 0,
        }
    }

    /// Named parameter tensors and their shapes, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv1d { c_in, c_out } => {
                vec![("weight", vec![c_out, KERNEL, c_in]), ("bias", vec![c_out])]
            }
            LayerSpec::BatchNorm1d { channels } => {
                vec![("gamma", vec![channels]), ("beta", vec![channels])]
            }
            LayerSpec::Lstm { input, hidden } => vec![
                ("w_ih", vec![4 * hidden, input]),
                ("w_hh", vec![4 * hidden, hidden]),
                ("bias", vec![4 * hidden]),
            ],
            LayerSpec::Linear { input, output } => {
                vec![("weight", vec![output, input]), ("bias", vec![output])]
            }
            LayerSpec::Relu | LayerSpec::Flatten => vec![],
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d { c_in, c_out } => write!(f, "conv1d {c_in} {c_out}"),
            LayerSpec::BatchNorm1d { channels } => write!(f, "batchnorm1d {channels}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Lstm { input, hidden } => write!(f, "lstm {input} {hidden}"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Linear { input, output } => write!(f, "linear {input} {output}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unrecognised layer spec `{s}`"));
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|v| v.parse().ok())
                .filter(|&v| v > 0)
                .ok_or_else(bad)
        };
        let spec = match parts.first().copied() {
            Some("conv1d") if parts.len() == 3 => LayerSpec::Conv1d {
                c_in: num(1)?,
                c_out: num(2)?,
            },
            Some("batchnorm1d") if parts.len() == 2 => LayerSpec::BatchNorm1d { channels: num(1)? },
            Some("relu") if parts.len() == 1 => LayerSpec::Relu,
            Some("lstm") if parts.len() == 3 => LayerSpec::Lstm {
                input: num(1)?,
                hidden: num(2)?,
            },
            Some("flatten") if parts.len() == 1 => LayerSpec::Flatten,
            Some("linear") if parts.len() == 3 => LayerSpec::Linear {
                input: num(1)?,
                output: num(2)?,
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// A layer together with its forward-pass caches.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    BatchNorm1d(BatchNorm1d<T>),
    Relu(Relu),
    Lstm(Lstm<T>),
    Flatten(Vec<usize>),
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec) -> Self {
        match spec {
            LayerSpec::Conv1d { c_in, c_out } => Layer::Conv1d(Conv1d::new(c_in, c_out)),
            LayerSpec::BatchNorm1d { channels } => Layer::BatchNorm1d(BatchNorm1d::new(channels)),
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::Lstm { input, hidden } => Layer::Lstm(Lstm::new(input, hidden)),
            LayerSpec::Flatten => Layer::Flatten(Vec::new()),
            LayerSpec::Linear { input, output } => Layer::Linear(Linear::new(input, output)),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                c_in: c.c_in,
                c_out: c.c_out,
            },
            Layer::BatchNorm1d(b) => LayerSpec::BatchNorm1d {
                channels: b.channels,
            },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Lstm(l) => LayerSpec::Lstm {
                input: l.input,
                hidden: l.hidden,
            },
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Linear(l) => LayerSpec::Linear {
                input: l.input,
                output: l.output,
            },
        }
    }

    fn init(&self, p: &mut [T], rng: &mut impl Rng) {
        match self {
            Layer::Conv1d(c) => c.init(p, rng),
            Layer::BatchNorm1d(b) => b.init(p),
            Layer::Lstm(l) => l.init(p, rng),
            Layer::Linear(l) => l.init(p, rng),
            Layer::Relu(_) | Layer::Flatten(_) => {}
        }
    }

    pub fn forward(&mut self, p: &[T], x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv1d(c) => c.forward(p, &x),
            Layer::BatchNorm1d(b) => b.forward(p, x, train),
            Layer::Relu(r) => Ok(r.forward(x)),
            Layer::Lstm(l) => l.forward(p, &x),
            Layer::Flatten(shape) => {
                x.expect_rank(3, "flatten")?;
                *shape = x.shape().to_vec();
                let (b, n) = (shape[0], shape[1] * shape[2]);
                x.reshape(&[b, n])
            }
            Layer::Linear(l) => l.forward(p, &x),
        }
    }

    /// Accumulates parameter gradients into `g`. `dx` is skipped when not needed.
    pub fn backward(
        &mut self,
        p: &[T],
        g: &mut [T],
        dy: Tensor<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        match self {
            Layer::Conv1d(c) => c.backward(p, g, &dy, need_dx),
            Layer::BatchNorm1d(b) => b.backward(p, g, dy).map(Some),
            Layer::Relu(r) => r.backward(dy).map(Some),
            Layer::Lstm(l) => l.backward(p, g, &dy, need_dx),
            Layer::Flatten(shape) => dy.reshape(shape).map(Some),
            Layer::Linear(l) => l.backward(p, g, &dy, need_dx),
        }
    }
}

/// Sequential stack whose parameters live in one flat vector.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    offsets: Vec<usize>,
    params: Vec<T>,
    grads: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the stack with zeroed parameters.
    pub fn new(specs: &[LayerSpec]) -> Self {
        let layers: Vec<Layer<T>> = specs.iter().map(|&s| Layer::new(s)).collect();
        let mut offsets = Vec::with_capacity(specs.len() + 1);
        let mut total = 0;
        for s in specs {
            offsets.push(total);
            total += s.param_count();
        }
        offsets.push(total);
        Network {
            layers,
            offsets,
            params: vec![T::zero(); total],
            grads: vec![T::zero(); total],
        }
    }

    /// Builds the stack with seeded random initial parameters.
    pub fn seeded(specs: &[LayerSpec], seed: u64) -> Self {
        let mut net = Self::new(specs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..net.layers.len() {
            let (a, b) = (net.offsets[i], net.offsets[i + 1]);
            net.layers[i].init(&mut net.params[a..b], &mut rng);
        }
        net
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn grads(&self) -> &[T] {
        &self.grads
    }

    /// Parameter slice of layer `i`.
    pub fn layer_params(&self, i: usize) -> &[T] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn layer_params_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&self.params[self.offsets[i]..self.offsets[i + 1]], h, train)?;
        }
        Ok(h)
    }

    /// Backpropagates `dy` through the last forward pass, accumulating into the gradients.
    /// Returns the gradient with respect to the network input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            d = self.layers[i]
                .backward(&self.params[a..b], &mut self.grads[a..b], d, true)?
                .expect("input gradient requested");
        }
        Ok(d)
    }

    /// Backward pass that skips the input gradient of the first layer.
    fn backward_params(&mut self, dy: Tensor<T>) -> Result<()> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            match self.layers[i].backward(&self.params[a..b], &mut self.grads[a..b], d, i > 0)? {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }

    /// One optimisation step on a batch; returns the batch loss before the update.
    pub fn train_step(
        &mut self,
        x: &Tensor<T>,
        target: &Tensor<T>,
        opt: &mut Optimizer<T>,
    ) -> Result<T> {
        let y = self.forward(x, true)?;
        let (loss, dy) = mse_loss(&y, target)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss:?}")));
        }
        self.zero_grads();
        self.backward_params(dy)?;
        opt.step(&mut self.params, &self.grads)?;
        Ok(loss)
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        let mut out = Network::<U>::new(&self.specs());
        out.params = conv(&self.params);
        for (dst, src) in out.layers.iter_mut().zip(&self.layers) {
            if let (Layer::BatchNorm1d(d), Layer::BatchNorm1d(s)) = (dst, src) {
                d.running_mean = conv(&s.running_mean);
                d.running_var = conv(&s.running_var);
                d.updates = s.updates;
            }
        }
        out
    }
}
