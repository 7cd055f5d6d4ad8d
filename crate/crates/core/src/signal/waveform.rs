use std::path::Path;

use num_complex::Complex64;

use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    /// Real passband samples in volts.
    Real(Vec<f64>),
    /// Complex baseband envelope in volts.
    Complex(Vec<Complex64>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Real(v) => v.len(),
            Samples::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A sampled waveform with the symbols it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub samples: Samples,
    pub sample_rate: f64,
    /// QAM indices, `n_subcarriers` per OFDM symbol, flattened in time order.
    pub tx_indices: Vec<usize>,
    pub constellation_order: usize,
    pub n_subcarriers: usize,
    pub seed: u64,
    /// Volts per unit of the normalised complex envelope.
    pub scale: f64,
}

impl WaveformRecord {
    pub fn symbol_count(&self) -> usize {
        self.tx_indices
            .len()
            .checked_div(self.n_subcarriers)
            .unwrap_or(0)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn real(&self) -> Result<&[f64]> {
        match &self.samples {
            Samples::Real(v) => Ok(v),
            Samples::Complex(_) => Err(Error::InvalidInput(
                "operation needs a real passband record".into(),
            )),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("waveform");
        let (domain, n) = match &self.samples {
            Samples::Real(v) => ("real", v.len()),
            Samples::Complex(v) => ("complex", v.len()),
        };
        c.set("domain", domain);
        c.set("sample_rate", self.sample_rate);
        c.set("sample_count", n);
        c.set("constellation_order", self.constellation_order);
        c.set("n_subcarriers", self.n_subcarriers);
        c.set("symbol_count", self.symbol_count());
        c.set("seed", self.seed);
        c.set("scale", format!("{:e}", self.scale));
        c.set("tx_count", self.tx_indices.len());
        c.set(
            "payload",
            "f32 samples (re,im interleaved when complex) then f32 tx indices",
        );
        match &self.samples {
            Samples::Real(v) => c.push_f32(v.iter().map(|&x| x as f32)),
            Samples::Complex(v) => c.push_f32(v.iter().flat_map(|z| [z.re as f32, z.im as f32])),
        }
        c.push_f32(self.tx_indices.iter().map(|&i| i as f32));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("waveform")?;
        let n: usize = c.parse("sample_count")?;
        let tx_count: usize = c.parse("tx_count")?;
        let (samples, used) = match c.require("domain")? {
            "real" => (
                Samples::Real(c.read_f32(0, n)?.into_iter().map(f64::from).collect()),
                n * 4,
            ),
            "complex" => {
                let raw = c.read_f32(0, 2 * n)?;
                (
                    Samples::Complex(
                        raw.chunks_exact(2)
                            .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
                            .collect(),
                    ),
                    n * 8,
                )
            }
            other => return Err(Error::Format(format!("unknown domain {other:?}"))),
        };
        let tx_indices = c
            .read_f32(used, tx_count)?
            .into_iter()
            .map(|v| v as usize)
            .collect();
        Ok(Self {
            samples,
            sample_rate: c.parse("sample_rate")?,
            tx_indices,
            constellation_order: c.parse("constellation_order")?,
            n_subcarriers: c.parse("n_subcarriers")?,
            seed: c.parse("seed")?,
            scale: c.parse("scale")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
