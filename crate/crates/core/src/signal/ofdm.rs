//! OFDM modulation onto a real passband carrier and the matching
//! integrate-and-dump demodulator.
//!
//! Subcarrier `k` sits at `f_c + (k - (n-1)/2)·Δf`. With the default plan
//! (`f_c/Δf = 162.5`, 128 carriers) every passband subcarrier completes an
//! integer number of cycles per symbol, so one FFT bin per subcarrier carries
//! it exactly: bin `99 + k`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::qam::{qam_map, QamConstellation};
use super::waveform::{Samples, WaveformRecord};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub center_frequency: f64,
    pub analog_rate: f64,
    pub cyclic_prefix_samples: usize,
    /// Peak passband amplitude each record is scaled to, in volts.
    pub target_peak: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 128,
            subcarrier_spacing: 8e6,
            center_frequency: 1.3e9,
            analog_rate: 65.536e9,
            cyclic_prefix_samples: 0,
            target_peak: 0.95 * 0.5,
        }
    }
}

fn integral(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if r < 0.0 || (x - r).abs() > 1e-9 * x.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} must be a non-negative integer, got {x}"
        )));
    }
    Ok(r as usize)
}

impl OfdmConfig {
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// Samples in the useful (FFT) part of one symbol at `rate`.
    pub fn fft_len(&self, rate: f64) -> Result<usize> {
        integral(
            rate / self.subcarrier_spacing,
            "sample rate / subcarrier spacing",
        )
    }

    /// FFT bin of subcarrier 0.
    pub fn first_bin(&self) -> Result<usize> {
        integral(
            self.center_frequency / self.subcarrier_spacing
                - (self.n_subcarriers as f64 - 1.0) / 2.0,
            "carrier plan bin offset",
        )
    }

    /// Cyclic prefix length at `rate` (the configured length is at the analog rate).
    pub fn cp_len(&self, rate: f64) -> Result<usize> {
        integral(
            self.cyclic_prefix_samples as f64 * rate / self.analog_rate,
            "cyclic prefix at this rate",
        )
    }

    pub fn samples_per_symbol(&self, rate: f64) -> Result<usize> {
        Ok(self.fft_len(rate)? + self.cp_len(rate)?)
    }

    pub fn band_edges(&self) -> (f64, f64) {
        let half = self.n_subcarriers as f64 * self.subcarrier_spacing / 2.0;
        (self.center_frequency - half, self.center_frequency + half)
    }

    pub fn subcarrier_frequency(&self, k: usize) -> f64 {
        self.center_frequency
            + (k as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing
    }

    /// Checks the carrier plan against an ADC running at `aggregate_rate`.
    pub fn validate(&self, aggregate_rate: f64) -> Result<()> {
        if self.n_subcarriers == 0 || self.subcarrier_spacing <= 0.0 || self.target_peak <= 0.0 {
            return Err(Error::InvalidParameter(
                "OFDM needs subcarriers, a positive spacing and a positive peak".into(),
            ));
        }
        let (lo, hi) = self.band_edges();
        if lo <= 0.0 || hi >= aggregate_rate / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "occupied band {lo:.4e}..{hi:.4e} Hz must lie inside (0, {:.4e})",
                aggregate_rate / 2.0
            )));
        }
        integral(
            self.analog_rate / aggregate_rate,
            "analog rate / aggregate ADC rate",
        )?;
        let n = self.fft_len(aggregate_rate)?;
        self.fft_len(self.analog_rate)?;
        if self.first_bin()? + self.n_subcarriers >= n / 2 {
            return Err(Error::InvalidParameter(
                "carrier plan exceeds Nyquist".into(),
            ));
        }
        self.cp_len(aggregate_rate)?;
        Ok(())
    }

    /// Carrier phase (radians) at the start of the useful part of symbol `b` at `rate`.
    fn carrier_phase(&self, b: usize, rate: f64) -> Result<f64> {
        let per_symbol = self.samples_per_symbol(rate)? as f64;
        let start = b as f64 * per_symbol + self.cp_len(rate)? as f64;
        let cycles =
            self.center_frequency / self.subcarrier_spacing * start / self.fft_len(rate)? as f64;
        Ok(std::f64::consts::TAU * cycles.fract())
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = FftPlanner::new();
    if inverse {
        p.plan_fft_inverse(n)
    } else {
        p.plan_fft_forward(n)
    }
}

/// Per-symbol baseband envelope normalised so its mean power equals the mean symbol energy.
pub fn ofdm_baseband(symbols: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let nsc = cfg.n_subcarriers;
    check_blocks(symbols.len(), nsc)?;
    let n = cfg.fft_len(cfg.analog_rate)?;
    let half = (nsc as f64 - 1.0) / 2.0;
    let ifft = plan(n, true);
    let norm = 1.0 / (nsc as f64).sqrt();
    let mut out = Vec::with_capacity(symbols.len() / nsc * n);
    for block in symbols.chunks(nsc) {
        // bin (k - nsc/2) mod n, then a half-bin twist for the (k - half) offsets
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, &x) in block.iter().enumerate() {
            let bin = (k as isize - (nsc / 2) as isize).rem_euclid(n as isize) as usize;
            buf[bin] = x * norm;
        }
        ifft.process(&mut buf);
        let twist = (nsc as f64 / 2.0 - half) / n as f64;
        for (m, z) in buf.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, std::f64::consts::TAU * twist * m as f64);
        }
        out.extend_from_slice(&buf);
    }
    Ok(out)
}

fn check_blocks(len: usize, nsc: usize) -> Result<()> {
    if nsc == 0 || !len.is_multiple_of(nsc) {
        return Err(invalid(format!(
            "symbol count {len} is not a multiple of {nsc} subcarriers"
        )));
    }
    Ok(())
}

/// Real passband waveform `Re{s(t)·e^{j2πf_c t}}` at `cfg.analog_rate`, scaled to `cfg.target_peak`.
///
/// `tx_indices` is recorded verbatim in the output; pass the indices that produced `symbols`.
pub fn ofdm_modulate(
    symbols: &[Complex64],
    tx_indices: Vec<usize>,
    constellation_order: usize,
    cfg: &OfdmConfig,
    seed: u64,
) -> Result<WaveformRecord> {
    let nsc = cfg.n_subcarriers;
    check_blocks(symbols.len(), nsc)?;
    let rate = cfg.analog_rate;
    let n = cfg.fft_len(rate)?;
    let cp = cfg.cp_len(rate)?;
    let bin0 = cfg.first_bin()?;
    if bin0 + nsc >= n / 2 {
        return Err(Error::InvalidParameter(
            "carrier plan exceeds the simulation Nyquist".into(),
        ));
    }
    let ifft = plan(n, true);
    let norm = 1.0 / (nsc as f64).sqrt();
    let mut samples = Vec::with_capacity(symbols.len() / nsc * (n + cp));
    for (b, block) in symbols.chunks(nsc).enumerate() {
        let rot = Complex64::from_polar(norm, cfg.carrier_phase(b, rate)?);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, &x) in block.iter().enumerate() {
            buf[bin0 + k] = x * rot;
        }
        ifft.process(&mut buf);
        samples.extend(buf[n - cp..].iter().map(|z| z.re));
        samples.extend(buf.iter().map(|z| z.re));
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 {
        cfg.target_peak / peak
    } else {
        1.0
    };
    for x in &mut samples {
        *x *= scale;
    }
    Ok(WaveformRecord {
        samples: Samples::Real(samples),
        sample_rate: rate,
        tx_indices,
        constellation_order,
        n_subcarriers: nsc,
        seed,
        scale,
    })
}

/// Draws `n_symbols` OFDM symbols of uniformly random QAM indices and modulates them.
pub fn generate_record(
    constellation: &QamConstellation,
    n_symbols: usize,
    cfg: &OfdmConfig,
    seed: u64,
) -> Result<WaveformRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = constellation.order();
    let indices: Vec<usize> = (0..n_symbols * cfg.n_subcarriers)
        .map(|_| rng.random_range(0..order))
        .collect();
    let symbols = qam_map(&indices, constellation)?;
    ofdm_modulate(&symbols, indices, order, cfg, seed)
}

/// Integrate-and-dump demodulation of real passband samples taken at `rate`.
///
/// Downconversion and the per-subcarrier DFT over one symbol period collapse
/// into a single FFT bin pick because every subcarrier is bin-centred; the
/// carrier image is orthogonal over the symbol and drops out of the projection.
pub fn demodulate_samples(
    samples: &[f64],
    rate: f64,
    scale: f64,
    cfg: &OfdmConfig,
) -> Result<Vec<Complex64>> {
    let nsc = cfg.n_subcarriers;
    let n = cfg.fft_len(rate)?;
    let cp = cfg.cp_len(rate)?;
    let per = n + cp;
    if samples.is_empty() || !samples.len().is_multiple_of(per) {
        return Err(invalid(format!(
            "record of {} samples is not a whole number of {per}-sample symbols",
            samples.len()
        )));
    }
    let bin0 = cfg.first_bin()?;
    if bin0 + nsc >= n / 2 {
        return Err(Error::InvalidParameter(
            "carrier plan exceeds Nyquist at this rate".into(),
        ));
    }
    let fft = plan(n, false);
    let gain = 2.0 * (nsc as f64).sqrt() / (n as f64 * scale);
    let mut out = Vec::with_capacity(samples.len() / per * nsc);
    for (b, block) in samples.chunks(per).enumerate() {
        let mut buf: Vec<Complex64> = block[cp..]
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        fft.process(&mut buf);
        let derot = Complex64::from_polar(gain, -cfg.carrier_phase(b, rate)?);
        out.extend(buf[bin0..bin0 + nsc].iter().map(|&z| z * derot));
    }
    Ok(out)
}

pub fn ofdm_demodulate(record: &WaveformRecord, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    match &record.samples {
        Samples::Real(x) => demodulate_samples(x, record.sample_rate, record.scale, cfg),
        Samples::Complex(env) => {
            let nsc = cfg.n_subcarriers;
            let n = cfg.fft_len(record.sample_rate)?;
            if env.is_empty() || env.len() % n != 0 {
                return Err(invalid("baseband record is not a whole number of symbols"));
            }
            let half = (nsc as f64 - 1.0) / 2.0;
            let fft = plan(n, false);
            let gain = (nsc as f64).sqrt() / (n as f64 * record.scale);
            let mut out = Vec::with_capacity(env.len() / n * nsc);
            for block in env.chunks(n) {
                let mut buf: Vec<Complex64> = block
                    .iter()
                    .enumerate()
                    .map(|(m, &z)| {
                        z * Complex64::from_polar(
                            gain,
                            std::f64::consts::TAU * half * m as f64 / n as f64,
                        )
                    })
                    .collect();
                fft.process(&mut buf);
                out.extend_from_slice(&buf[..nsc]);
            }
            Ok(out)
        }
    }
}

/// Analytic-signal envelope of a real passband record, symbol by symbol.
pub fn complex_envelope(record: &WaveformRecord, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let x = match &record.samples {
        Samples::Complex(env) => return Ok(env.clone()),
        Samples::Real(x) => x,
    };
    let n = cfg.fft_len(record.sample_rate)?;
    let cp = cfg.cp_len(record.sample_rate)?;
    let per = n + cp;
    if x.is_empty() || x.len() % per != 0 {
        return Err(invalid("record is not a whole number of symbols"));
    }
    let bin0 = cfg.first_bin()?;
    let nsc = cfg.n_subcarriers;
    let fft = plan(n, false);
    let ifft = plan(n, true);
    let mut out = Vec::with_capacity(x.len() / per * n);
    for block in x.chunks(per) {
        let mut buf: Vec<Complex64> = block[cp..]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft.process(&mut buf);
        let mut base = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..nsc {
            base[k] = buf[bin0 + k] * (2.0 / n as f64);
        }
        ifft.process(&mut base);
        out.extend_from_slice(&base);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PaprMode {
    #[default]
    PerSymbol,
    PerRecord,
}

/// PAPR in dB of a complex envelope segment.
pub fn papr_of(envelope: &[Complex64]) -> Result<f64> {
    if envelope.is_empty() {
        return Err(invalid("PAPR of an empty signal"));
    }
    let (peak, sum) = envelope.iter().fold((0.0f64, 0.0f64), |(p, s), z| {
        let e = z.norm_sqr();
        (p.max(e), s + e)
    });
    if sum == 0.0 {
        return Err(Error::ZeroEnergy("PAPR of an all-zero signal".into()));
    }
    Ok(10.0 * (peak / (sum / envelope.len() as f64)).log10())
}

/// PAPR values of a record's complex envelope, one per OFDM symbol or one for the whole record.
pub fn papr_db(record: &WaveformRecord, cfg: &OfdmConfig, mode: PaprMode) -> Result<Vec<f64>> {
    let env = complex_envelope(record, cfg)?;
    match mode {
        PaprMode::PerRecord => Ok(vec![papr_of(&env)?]),
        PaprMode::PerSymbol => {
            let n = cfg.fft_len(record.sample_rate)?;
            env.chunks(n).map(papr_of).collect()
        }
    }
}

/// Complementary CDF `P(PAPR > threshold)` evaluated on `thresholds`.
pub fn papr_ccdf(values: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| (t, values.iter().filter(|&&v| v > t).count() as f64 / n))
        .collect()
}
