//! Behavioural model of an M-channel time-interleaved ADC.
//!
//! Each channel runs its own chain: memory filter, tanh compression, a
//! sampler with static skew plus band-limited jitter, and a 13-bit midtread
//! quantizer. Channel `m` produces aggregate samples `k = n·M + m`. The ideal
//! reference samples the unfiltered, linear waveform on the exact grid and
//! passes it through the same quantizer.

pub mod filter;
pub mod interp;
pub mod timing;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::par;
use crate::signal::WaveformRecord;
pub use filter::{design_butterworth, design_chebyshev1, Sos};
pub use interp::{sample_nonuniform, SincInterpolator};
pub use timing::{draw_skews, jitter_sequence};

/// Drawing ranges and switches for the per-channel impairments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentRanges {
    /// Max-min spread of the static skews, seconds.
    pub skew_spread: f64,
    pub jitter_rms: f64,
    pub jitter_bandwidth: f64,
    pub ripple_db: [f64; 2],
    pub corner_hz: [f64; 2],
    pub filter_order: usize,
    /// tanh scale range in units of half the full scale.
    pub nonlinearity: [f64; 2],
    pub enable_skew: bool,
    pub enable_jitter: bool,
    pub enable_nonlinearity: bool,
    pub enable_memory: bool,
}

impl Default for ImpairmentRanges {
    fn default() -> Self {
        Self {
            skew_spread: 12e-12,
            jitter_rms: 390e-15,
            jitter_bandwidth: 20e6,
            ripple_db: [1.5, 6.0],
            corner_hz: [5e9, 8e9],
            filter_order: 8,
            nonlinearity: [1.5, 2.5],
            enable_skew: true,
            enable_jitter: true,
            enable_nonlinearity: true,
            enable_memory: true,
        }
    }
}

impl ImpairmentRanges {
    pub fn disabled() -> Self {
        Self {
            enable_skew: false,
            enable_jitter: false,
            enable_nonlinearity: false,
            enable_memory: false,
            ..Self::default()
        }
    }
}

/// Converter-level settings as they appear in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcSettings {
    pub n_channels: usize,
    pub channel_rate: f64,
    pub resolution_bits: u32,
    pub full_scale: f64,
    pub seed: u64,
    pub impairments: ImpairmentRanges,
}

impl Default for AdcSettings {
    fn default() -> Self {
        Self {
            n_channels: 8,
            channel_rate: 1.024e9,
            resolution_bits: 13,
            full_scale: 1.0,
            seed: 2021,
            impairments: ImpairmentRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFilter {
    pub ripple_db: f64,
    pub corner_hz: f64,
    pub order: usize,
    pub sim_rate: f64,
    pub sos: Sos,
}

impl MemoryFilter {
    pub fn new(ripple_db: f64, corner_hz: f64, order: usize, sim_rate: f64) -> Result<Self> {
        let sos = design_chebyshev1(order, ripple_db, corner_hz, sim_rate)?;
        Ok(Self {
            ripple_db,
            corner_hz,
            order,
            sim_rate,
            sos,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImpairments {
    pub skew: f64,
    pub jitter_rms: f64,
    pub jitter_bandwidth: f64,
    /// `A` in `A·tanh(x/A)`; `None` bypasses the nonlinearity.
    pub nonlinearity_scale: Option<f64>,
    /// `None` is an all-pass front end.
    pub memory_filter: Option<MemoryFilter>,
}

impl ChannelImpairments {
    pub fn ideal() -> Self {
        Self {
            skew: 0.0,
            jitter_rms: 0.0,
            jitter_bandwidth: 20e6,
            nonlinearity_scale: None,
            memory_filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdcConfig {
    pub n_channels: usize,
    pub channel_rate: f64,
    pub resolution_bits: u32,
    pub full_scale: f64,
    pub channels: Vec<ChannelImpairments>,
    pub seed: u64,
}

impl AdcConfig {
    /// Draws every channel's parameters from `settings` with its seed.
    pub fn draw(settings: &AdcSettings, sim_rate: f64) -> Result<Self> {
        let r = &settings.impairments;
        let m = settings.n_channels;
        let mut rng = timing::channel_rng(settings.seed, 0);
        let skews = draw_skews(m, r.skew_spread, &mut rng);
        let half_fs = settings.full_scale / 2.0;
        let mut channels = Vec::with_capacity(m);
        for skew in skews {
            let ripple = uniform(&mut rng, r.ripple_db);
            let corner = uniform(&mut rng, r.corner_hz);
            let a = uniform(&mut rng, r.nonlinearity) * half_fs;
            channels.push(ChannelImpairments {
                skew: if r.enable_skew { skew } else { 0.0 },
                jitter_rms: if r.enable_jitter { r.jitter_rms } else { 0.0 },
                jitter_bandwidth: r.jitter_bandwidth,
                nonlinearity_scale: r.enable_nonlinearity.then_some(a),
                memory_filter: if r.enable_memory {
                    Some(MemoryFilter::new(ripple, corner, r.filter_order, sim_rate)?)
                } else {
                    None
                },
            });
        }
        let cfg = Self {
            n_channels: m,
            channel_rate: settings.channel_rate,
            resolution_bits: settings.resolution_bits,
            full_scale: settings.full_scale,
            channels,
            seed: settings.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ideal(settings: &AdcSettings) -> Self {
        Self {
            n_channels: settings.n_channels,
            channel_rate: settings.channel_rate,
            resolution_bits: settings.resolution_bits,
            full_scale: settings.full_scale,
            channels: vec![ChannelImpairments::ideal(); settings.n_channels],
            seed: settings.seed,
        }
    }

    pub fn aggregate_rate(&self) -> f64 {
        self.n_channels as f64 * self.channel_rate
    }

    pub fn lsb(&self) -> f64 {
        self.full_scale / 2f64.powi(self.resolution_bits as i32)
    }

    /// Divisor mapping codes into [-1, 1).
    pub fn code_scale(&self) -> f64 {
        2f64.powi(self.resolution_bits as i32 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.channels.len() != self.n_channels {
            return Err(Error::InvalidParameter(
                "channel list must match n_channels".into(),
            ));
        }
        if !(2..=16).contains(&self.resolution_bits) {
            return Err(Error::InvalidParameter(format!(
                "resolution must be 2..=16 bits, got {}",
                self.resolution_bits
            )));
        }
        if self.full_scale <= 0.0 || self.channel_rate <= 0.0 {
            return Err(Error::InvalidParameter(
                "full scale and channel rate must be positive".into(),
            ));
        }
        for (m, ch) in self.channels.iter().enumerate() {
            if matches!(ch.nonlinearity_scale, Some(a) if a <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "channel {m}: nonlinearity scale must be positive"
                )));
            }
            if let Some(f) = &ch.memory_filter {
                if !f.sos.is_stable() {
                    return Err(Error::InvalidParameter(format!(
                        "channel {m}: memory filter is unstable"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Header fields describing every drawn parameter.
    pub(crate) fn write_header(&self, c: &mut Container) {
        c.set("adc.n_channels", self.n_channels);
        c.set("adc.channel_rate", self.channel_rate);
        c.set("adc.resolution_bits", self.resolution_bits);
        c.set("adc.full_scale", self.full_scale);
        c.set("adc.seed", self.seed);
        for (m, ch) in self.channels.iter().enumerate() {
            let nl = ch
                .nonlinearity_scale
                .map_or_else(|| "none".to_string(), |a| a.to_string());
            let mem = ch.memory_filter.as_ref().map_or_else(
                || "none".to_string(),
                |f| format!("{}/{}/{}/{}", f.ripple_db, f.corner_hz, f.order, f.sim_rate),
            );
            c.set(
                &format!("adc.channel.{m}"),
                format!(
                    "skew={};jitter_rms={};jitter_bandwidth={};nonlinearity={nl};memory={mem}",
                    ch.skew, ch.jitter_rms, ch.jitter_bandwidth
                ),
            );
        }
    }

    pub(crate) fn read_header(c: &Container) -> Result<Self> {
        let n: usize = c.parse("adc.n_channels")?;
        let bad = |what: &str| Error::Format(format!("bad channel description: {what}"));
        let mut channels = Vec::with_capacity(n);
        for m in 0..n {
            let line = c.require(&format!("adc.channel.{m}"))?;
            let mut ch = ChannelImpairments::ideal();
            for part in line.split(';') {
                let (k, v) = part.split_once('=').ok_or_else(|| bad(part))?;
                let num = |v: &str| v.parse::<f64>().map_err(|_| bad(part));
                match k {
                    "skew" => ch.skew = num(v)?,
                    "jitter_rms" => ch.jitter_rms = num(v)?,
                    "jitter_bandwidth" => ch.jitter_bandwidth = num(v)?,
                    "nonlinearity" if v == "none" => ch.nonlinearity_scale = None,
                    "nonlinearity" => ch.nonlinearity_scale = Some(num(v)?),
                    "memory" if v == "none" => ch.memory_filter = None,
                    "memory" => {
                        let f: Vec<&str> = v.split('/').collect();
                        if f.len() != 4 {
                            return Err(bad(part));
                        }
                        let order = f[2].parse::<usize>().map_err(|_| bad(part))?;
                        ch.memory_filter = Some(MemoryFilter::new(
                            num(f[0])?,
                            num(f[1])?,
                            order,
                            num(f[3])?,
                        )?);
                    }
                    _ => return Err(bad(part)),
                }
            }
            channels.push(ch);
        }
        let cfg = Self {
            n_channels: n,
            channel_rate: c.parse("adc.channel_rate")?,
            resolution_bits: c.parse("adc.resolution_bits")?,
            full_scale: c.parse("adc.full_scale")?,
            channels,
            seed: c.parse("adc.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// `A·tanh(x/A)`: odd, monotone, bounded by ±A, unit small-signal gain.
pub fn apply_nonlinearity(x: f64, scale: f64) -> f64 {
    scale * (x / scale).tanh()
}

pub fn code_limits(bits: u32) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

/// Midtread quantizer, round half away from zero, saturating at the rails.
/// Returns the code and whether it clipped.
pub fn quantize(x: f64, bits: u32, v_fs: f64) -> (i32, bool) {
    let lsb = v_fs / 2f64.powi(bits as i32);
    let (lo, hi) = code_limits(bits);
    let q = (x / lsb).round();
    if q > hi as f64 {
        (hi, true)
    } else if q < lo as f64 {
        (lo, true)
    } else {
        (q as i32, false)
    }
}

/// Per-channel timing error, `offset[m][n] = skew_m + jitter_m[n]`, in seconds.
pub fn gen_timing_offsets(
    cfg: &AdcConfig,
    n_channel_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.channels
        .iter()
        .enumerate()
        .map(|(m, ch)| {
            let mut rng = timing::channel_rng(seed, 1 + m as u64);
            let jitter = jitter_sequence(
                n_channel_samples,
                ch.jitter_rms,
                ch.jitter_bandwidth,
                cfg.channel_rate,
                &mut rng,
            )?;
            Ok(jitter.into_iter().map(|j| ch.skew + j).collect())
        })
        .collect()
}

/// Where a capture's analog input came from; enough to score symbol errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSource {
    pub constellation_order: usize,
    pub n_subcarriers: usize,
    pub seed: u64,
    /// Volts per unit envelope of the source record.
    pub scale: f64,
    pub tx_indices: Vec<usize>,
}

impl CaptureSource {
    pub fn of(record: &WaveformRecord) -> Self {
        Self {
            constellation_order: record.constellation_order,
            n_subcarriers: record.n_subcarriers,
            seed: record.seed,
            scale: record.scale,
            tx_indices: record.tx_indices.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdcCapture {
    pub nonideal_codes: Vec<i16>,
    pub ideal_codes: Vec<i16>,
    pub config: AdcConfig,
    pub source: CaptureSource,
    pub clipped_nonideal: usize,
    pub clipped_ideal: usize,
}

impl AdcCapture {
    pub fn len(&self) -> usize {
        self.ideal_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ideal_codes.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.config.aggregate_rate()
    }

    pub fn normalize(&self, codes: &[i16]) -> Vec<f64> {
        let s = self.config.code_scale();
        codes.iter().map(|&c| c as f64 / s).collect()
    }

    /// Converts normalised values back to volts at the converter input.
    pub fn normalized_to_volts(&self, x: &[f64]) -> Vec<f64> {
        let v = self.config.code_scale() * self.config.lsb();
        x.iter().map(|&s| s * v).collect()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("capture");
        c.set("sample_rate", self.sample_rate());
        c.set("sample_count", self.len());
        c.set("constellation_order", self.source.constellation_order);
        c.set("n_subcarriers", self.source.n_subcarriers);
        c.set(
            "symbol_count",
            self.source.tx_indices.len() / self.source.n_subcarriers.max(1),
        );
        c.set("seed", self.source.seed);
        c.set("scale", self.source.scale);
        c.set("tx_count", self.source.tx_indices.len());
        c.set("clipped_nonideal", self.clipped_nonideal);
        c.set("clipped_ideal", self.clipped_ideal);
        self.config.write_header(&mut c);
        c.set(
            "payload",
            "i16 nonideal codes, i16 ideal codes, i16 tx indices",
        );
        c.push_i16(self.nonideal_codes.iter().copied());
        c.push_i16(self.ideal_codes.iter().copied());
        c.push_i16(self.source.tx_indices.iter().map(|&i| i as i16));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("capture")?;
        let n: usize = c.parse("sample_count")?;
        let tx: usize = c.parse("tx_count")?;
        Ok(Self {
            nonideal_codes: c.read_i16(0, n)?,
            ideal_codes: c.read_i16(2 * n, n)?,
            config: AdcConfig::read_header(c)?,
            source: CaptureSource {
                constellation_order: c.parse("constellation_order")?,
                n_subcarriers: c.parse("n_subcarriers")?,
                seed: c.parse("seed")?,
                scale: c.parse("scale")?,
                tx_indices: c
                    .read_i16(4 * n, tx)?
                    .into_iter()
                    .map(|i| i as usize)
                    .collect(),
            },
            clipped_nonideal: c.parse("clipped_nonideal")?,
            clipped_ideal: c.parse("clipped_ideal")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Jitter realisation seed: fixed per (converter, record) pair.
pub fn jitter_seed(cfg: &AdcConfig, record_seed: u64) -> u64 {
    splitmix(cfg.seed ^ splitmix(record_seed))
}

/// Runs `analog` through every channel and interleaves the results.
pub fn simulate_interleaved(analog: &WaveformRecord, cfg: &AdcConfig) -> Result<AdcCapture> {
    cfg.validate()?;
    let x = analog.real()?;
    let rate = analog.sample_rate;
    let agg = cfg.aggregate_rate();
    let ratio_f = rate / agg;
    let ratio = ratio_f.round() as usize;
    if ratio == 0 || (ratio_f - ratio as f64).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "analog rate {rate:e} is not an integer multiple of the aggregate rate {agg:e}"
        )));
    }
    let m_ch = cfg.n_channels;
    let bits = cfg.resolution_bits;
    let n_out = x.len() / ratio;
    let per_channel = n_out.div_ceil(m_ch);

    let offsets = gen_timing_offsets(cfg, per_channel, jitter_seed(cfg, analog.seed))?;
    let max_off = offsets.iter().flatten().fold(0.0f64, |m, o| m.max(o.abs()));
    let interp = SincInterpolator::default();
    // zero signal outside the record
    let pad = interp.margin() + (max_off * rate).ceil() as usize + 2;
    let mut padded = vec![0.0; x.len() + 2 * pad];
    padded[pad..pad + x.len()].copy_from_slice(x);

    let mut ideal = Vec::with_capacity(n_out);
    let mut clipped_ideal = 0;
    for k in 0..n_out {
        let (code, clip) = quantize(x[k * ratio], bits, cfg.full_scale);
        clipped_ideal += clip as usize;
        ideal.push(code as i16);
    }

    let per_ch: Vec<Result<(Vec<i16>, usize)>> = par::map_indexed(m_ch, |m| {
        let ch = &cfg.channels[m];
        let mut y = match &ch.memory_filter {
            Some(f) => f.sos.filter(&padded),
            None => padded.clone(),
        };
        if let Some(a) = ch.nonlinearity_scale {
            for v in &mut y {
                *v = apply_nonlinearity(*v, a);
            }
        }
        let mut codes = Vec::with_capacity(per_channel);
        let mut clipped = 0;
        for (n, off) in offsets[m].iter().enumerate() {
            let k = n * m_ch + m;
            if k >= n_out {
                break;
            }
            let pos = (pad + k * ratio) as f64 + off * rate;
            let v = interp.eval(&y, pos)?;
            let (code, clip) = quantize(v, bits, cfg.full_scale);
            clipped += clip as usize;
            codes.push(code as i16);
        }
        Ok((codes, clipped))
    });

    let mut nonideal = vec![0i16; n_out];
    let mut clipped_nonideal = 0;
    for (m, res) in per_ch.into_iter().enumerate() {
        let (codes, clipped) = res?;
        clipped_nonideal += clipped;
        for (n, c) in codes.into_iter().enumerate() {
            nonideal[n * m_ch + m] = c;
        }
    }

    Ok(AdcCapture {
        nonideal_codes: nonideal,
        ideal_codes: ideal,
        config: cfg.clone(),
        source: CaptureSource::of(analog),
        clipped_nonideal,
        clipped_ideal,
    })
}
