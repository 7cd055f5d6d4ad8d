//! Chebyshev Type I and Butterworth low-pass design via the bilinear transform,
//! realised as cascaded second-order sections.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub gain: f64,
}

impl Sos {
    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / rate);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| {
                acc * (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (1.0 + s.a[0] * z1 + s.a[1] * z2)
            })
    }

    pub fn magnitude_db(&self, freq: f64, rate: f64) -> f64 {
        20.0 * self.response(freq, rate).norm().log10()
    }

    /// Pole magnitudes of every section.
    pub fn pole_radii(&self) -> Vec<f64> {
        self.sections
            .iter()
            .flat_map(|s| {
                let disc = Complex64::new(s.a[0] * s.a[0] - 4.0 * s.a[1], 0.0).sqrt();
                let p1 = (-s.a[0] + disc) / 2.0;
                let p2 = (-s.a[0] - disc) / 2.0;
                [p1.norm(), p2.norm()]
            })
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radii().iter().all(|&r| r < 1.0 - 1e-9)
    }

    /// Causal filtering from zero initial state (transposed direct form II).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| v * self.gain).collect();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }
}

fn check_corner(corner_hz: f64, rate: f64, order: usize) -> Result<()> {
    if order == 0 {
        return Err(Error::InvalidParameter(
            "filter order must be at least 1".into(),
        ));
    }
    if !(corner_hz > 0.0 && corner_hz < rate / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "corner {corner_hz:e} Hz must lie strictly between 0 and Nyquist {:e} Hz",
            rate / 2.0
        )));
    }
    Ok(())
}

/// Maps analog poles (zeros all at infinity) through the bilinear transform.
/// Every section gets unity DC gain; `dc_gain` sets the overall DC level.
fn bilinear_all_pole(poles: &[Complex64], rate: f64, dc_gain: f64) -> Sos {
    let k = 2.0 * rate;
    let mut sections = Vec::new();
    for p in poles {
        if p.im > 1e-12 * p.norm() {
            let zp = (k + p) / (k - p);
            let a = [-2.0 * zp.re, zp.norm_sqr()];
            let g = (1.0 + a[0] + a[1]) / 4.0;
            sections.push(Biquad {
                b: [g, 2.0 * g, g],
                a,
            });
        } else {
            let zp = (k + p.re) / (k - p.re);
            let g = (1.0 - zp) / 2.0;
            sections.push(Biquad {
                b: [g, g, 0.0],
                a: [-zp, 0.0],
            });
        }
    }
    Sos {
        sections,
        gain: dc_gain,
    }
}

fn prewarp(corner_hz: f64, rate: f64) -> f64 {
    2.0 * rate * (PI * corner_hz / rate).tan()
}

pub fn ripple_epsilon(ripple_db: f64) -> f64 {
    (10f64.powf(ripple_db / 10.0) - 1.0).sqrt()
}

/// Chebyshev Type I low-pass; the discrete magnitude at `corner_hz` is exactly `-ripple_db`.
pub fn design_chebyshev1(order: usize, ripple_db: f64, corner_hz: f64, rate: f64) -> Result<Sos> {
    check_corner(corner_hz, rate, order)?;
    if ripple_db.is_nan() || ripple_db <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "passband ripple must be positive, got {ripple_db}"
        )));
    }
    let eps = ripple_epsilon(ripple_db);
    let mu = (1.0 / eps).asinh() / order as f64;
    let wc = prewarp(corner_hz, rate);
    // upper-half-plane poles plus the real pole for odd orders
    let poles: Vec<Complex64> = (1..=order.div_ceil(2))
        .map(|k| {
            let theta = (2 * k - 1) as f64 * PI / (2 * order) as f64;
            Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos()) * wc
        })
        .collect();
    let dc = if order.is_multiple_of(2) {
        1.0 / (1.0 + eps * eps).sqrt()
    } else {
        1.0
    };
    Ok(bilinear_all_pole(&poles, rate, dc))
}

/// Butterworth low-pass with its -3 dB point at `corner_hz`.
pub fn design_butterworth(order: usize, corner_hz: f64, rate: f64) -> Result<Sos> {
    check_corner(corner_hz, rate, order)?;
    let wc = prewarp(corner_hz, rate);
    let poles: Vec<Complex64> = (1..=order.div_ceil(2))
        .map(|k| {
            let theta = (2 * k - 1) as f64 * PI / (2 * order) as f64;
            Complex64::new(-theta.sin(), theta.cos()) * wc
        })
        .collect();
    Ok(bilinear_all_pole(&poles, rate, 1.0))
}

/// Chebyshev polynomial of the first kind, valid for all real `x`.
pub fn chebyshev_t(n: usize, x: f64) -> f64 {
    if x.abs() <= 1.0 {
        (n as f64 * x.acos()).cos()
    } else {
        let s = if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
        s * (n as f64 * x.abs().acosh()).cosh()
    }
}
