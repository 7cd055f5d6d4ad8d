//! Global time-shift correction: cross-correlation delay estimate plus an
//! FFT fractional-delay filter.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};

/// Fraction of the record tapered at each end before the FFT delay.
pub const TAPER_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// Lag of `observed` behind `reference`, in samples.
    pub delay: f64,
    /// Normalised correlation at the integer peak.
    pub coefficient: f64,
}

fn centred(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Estimates `d` in `observed[n] ≈ reference[n - d]`.
///
/// Integer lag from the peak of `|xcorr|`, refined by a three-point parabola.
pub fn estimate_delay(reference: &[f64], observed: &[f64]) -> Result<DelayEstimate> {
    let n = reference.len();
    if n != observed.len() || n < 1024 {
        return Err(invalid(format!(
            "delay estimation needs equal lengths >= 1024, got {n} and {}",
            observed.len()
        )));
    }
    let r = centred(reference);
    let o = centred(observed);
    let er: f64 = r.iter().map(|v| v * v).sum();
    let eo: f64 = o.iter().map(|v| v * v).sum();
    if er == 0.0 || eo == 0.0 {
        return Err(Error::ZeroEnergy(
            "correlation with a constant signal".into(),
        ));
    }
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        v.resize(m, Complex64::new(0.0, 0.0));
        v
    };
    let mut fr = pad(&r);
    let mut fo = pad(&o);
    fft.process(&mut fr);
    fft.process(&mut fo);
    // c[τ] = Σ o[k] r[k - τ]
    let mut c: Vec<Complex64> = fo.iter().zip(&fr).map(|(a, b)| a * b.conj()).collect();
    ifft.process(&mut c);
    let norm = 1.0 / (m as f64 * (er * eo).sqrt());
    let at = |lag: i64| c[lag.rem_euclid(m as i64) as usize].re * norm;
    let max_lag = (n / 2) as i64 - 1;
    let mut best = 0i64;
    for lag in -max_lag..=max_lag {
        if at(lag).abs() > at(best).abs() {
            best = lag;
        }
    }
    let peak = at(best);
    let sign = peak.signum();
    let (ym, y0, yp) = (sign * at(best - 1), sign * at(best), sign * at(best + 1));
    let denom = ym - 2.0 * y0 + yp;
    let frac = if denom.abs() > 1e-300 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(DelayEstimate {
        delay: best as f64 + frac,
        coefficient: peak,
    })
}

/// Delays `signal` by `delay` samples with a linear-phase ramp on its FFT.
/// Output length equals input length; the first and last 1 % are tapered.
pub fn apply_fractional_delay(signal: &[f64], delay: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if delay.is_nan() || delay.abs() >= n as f64 / 4.0 {
        return Err(invalid(format!(
            "delay {delay} must be smaller than a quarter of the {n}-sample record"
        )));
    }
    if delay == 0.0 {
        return Ok(signal.to_vec());
    }
    let taper = ((n as f64 * TAPER_FRACTION).round() as usize).max(1);
    let m = (n + 2 * delay.abs().ceil() as usize + 2 * taper).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (i, &x) in signal.iter().enumerate() {
        let w = if i < taper {
            0.5 - 0.5 * (std::f64::consts::PI * (i as f64 + 0.5) / taper as f64).cos()
        } else if i >= n - taper {
            0.5 - 0.5 * (std::f64::consts::PI * ((n - 1 - i) as f64 + 0.5) / taper as f64).cos()
        } else {
            1.0
        };
        buf[i] = Complex64::new(x * w, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = if k <= m / 2 {
            k as f64
        } else {
            k as f64 - m as f64
        };
        let ramp = if k == m / 2 {
            // Nyquist bin: keep the output real
            Complex64::new((std::f64::consts::PI * delay).cos(), 0.0)
        } else {
            Complex64::from_polar(1.0, -std::f64::consts::TAU * f * delay / m as f64)
        };
        *z *= ramp;
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    Ok(buf[..n].iter().map(|z| z.re / m as f64).collect())
}

/// The shift baseline: align `observed` to `reference` by removing the estimated delay.
pub fn shift_correct(reference: &[f64], observed: &[f64]) -> Result<(Vec<f64>, DelayEstimate)> {
    let est = estimate_delay(reference, observed)?;
    Ok((apply_fractional_delay(observed, -est.delay)?, est))
}
