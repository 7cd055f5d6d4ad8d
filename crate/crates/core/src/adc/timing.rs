//! Static skew and band-limited random jitter of each channel's sampling clock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::filter::design_butterworth;
use crate::error::Result;

pub const JITTER_FILTER_ORDER: usize = 4;
const JITTER_WARMUP: usize = 1024;

/// Uniform draws rescaled to zero mean and an exact max-min spread.
pub fn draw_skews(n_channels: usize, spread: f64, rng: &mut impl Rng) -> Vec<f64> {
    if n_channels < 2 || spread == 0.0 {
        return vec![0.0; n_channels];
    }
    let raw: Vec<f64> = (0..n_channels).map(|_| rng.random::<f64>()).collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = raw.iter().map(|r| (r - lo) / (hi - lo) * spread).collect();
    let mean = scaled.iter().sum::<f64>() / n_channels as f64;
    scaled.iter().map(|s| s - mean).collect()
}

/// Gaussian jitter at `channel_rate`, low-passed to `bandwidth` and rescaled to exactly `rms`.
pub fn jitter_sequence(
    n: usize,
    rms: f64,
    bandwidth: f64,
    channel_rate: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if rms == 0.0 || n == 0 {
        return Ok(vec![0.0; n]);
    }
    let lp = design_butterworth(JITTER_FILTER_ORDER, bandwidth, channel_rate)?;
    let white: Vec<f64> = (0..n + JITTER_WARMUP)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let coloured = lp.filter(&white);
    let mut j = coloured[JITTER_WARMUP..].to_vec();
    let actual = (j.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    for v in &mut j {
        *v *= rms / actual;
    }
    Ok(j)
}

/// Per-channel RNG stream derived from one seed.
pub(crate) fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
