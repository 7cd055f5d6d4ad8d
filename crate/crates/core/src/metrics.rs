//! Figures of merit: SNDR/ENOB against the ideal converter, LSB error traces,
//! Welch spectra at a given resolution bandwidth, and symbol error rate.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

/// Samples dropped at each end of a record before scoring.
pub const EDGE_EXCLUSION: usize = 64;
/// Stand-in for an infinite SNDR in exports.
pub const SNDR_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sndr {
    pub sndr_db: f64,
    pub enob: f64,
    /// Error power was exactly zero; `sndr_db` holds the cap.
    pub capped: bool,
}

pub fn enob_from_sndr(sndr_db: f64) -> f64 {
    (sndr_db - 1.76) / 6.02
}

/// Error-power SNDR of `test` against `reference`, skipping `exclude` samples at each end.
pub fn sndr_enob_excluding(reference: &[f64], test: &[f64], exclude: usize) -> Result<Sndr> {
    if reference.len() != test.len() {
        return Err(invalid(format!(
            "length mismatch: reference {} vs test {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.len() <= 2 * exclude {
        return Err(invalid("record shorter than the edge exclusion"));
    }
    let r = &reference[exclude..reference.len() - exclude];
    let t = &test[exclude..test.len() - exclude];
    let signal: f64 = r.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(invalid("reference has no energy"));
    }
    let noise: f64 = r.iter().zip(t).map(|(a, b)| (b - a) * (b - a)).sum();
    if noise == 0.0 {
        return Ok(Sndr {
            sndr_db: SNDR_CAP_DB,
            enob: enob_from_sndr(SNDR_CAP_DB),
            capped: true,
        });
    }
    let sndr_db = 10.0 * (signal / noise).log10();
    Ok(Sndr {
        sndr_db,
        enob: enob_from_sndr(sndr_db),
        capped: false,
    })
}

/// SNDR/ENOB with the standard edge exclusion; both inputs at least 4096 samples.
pub fn sndr_enob(reference: &[f64], test: &[f64]) -> Result<Sndr> {
    if reference.len() < 4096 {
        return Err(invalid(format!(
            "SNDR needs at least 4096 samples, got {}",
            reference.len()
        )));
    }
    sndr_enob_excluding(reference, test, EDGE_EXCLUSION)
}

/// Per-sample error in LSBs: `(test - code/2^(bits-1)) · 2^(bits-1)`.
pub fn lsb_error_trace(reference_codes: &[i16], test: &[f64], bits: u32) -> Result<Vec<f64>> {
    if reference_codes.len() != test.len() {
        return Err(invalid("LSB trace inputs differ in length"));
    }
    let scale = 2f64.powi(bits as i32 - 1);
    Ok(reference_codes
        .iter()
        .zip(test)
        .map(|(&c, &t)| (t - c as f64 / scale) * scale)
        .collect())
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Fraction of positions where the two index streams disagree.
pub fn symbol_error_rate(tx: &[usize], rx: &[usize]) -> Result<f64> {
    if tx.len() != rx.len() || tx.is_empty() {
        return Err(invalid(format!(
            "SER needs equal non-empty sequences, got {} and {}",
            tx.len(),
            rx.len()
        )));
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx.len() as f64)
}

const FLAT_TOP: [f64; 5] = [
    0.215_578_95,
    0.416_631_58,
    0.277_263_158,
    0.083_578_947,
    0.006_947_368,
];

pub fn flat_top_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / n as f64;
            FLAT_TOP[0] - FLAT_TOP[1] * x.cos() + FLAT_TOP[2] * (2.0 * x).cos()
                - FLAT_TOP[3] * (3.0 * x).cos()
                + FLAT_TOP[4] * (4.0 * x).cos()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// One-sided power per bin in dB; a sine of amplitude `A` reads `10·log10(A²/2)`.
    pub magnitude_db: Vec<f64>,
    /// Rectangular-window phase of the first segment, present only inside the phase band.
    pub phase: Vec<Option<f64>>,
    /// Equivalent noise bandwidth of the magnitude window, in bins.
    pub enbw_bins: f64,
    pub segments: usize,
}

impl Spectrum {
    /// Total power implied by the bins, corrected for the window's noise bandwidth.
    pub fn total_power(&self) -> f64 {
        self.magnitude_db
            .iter()
            .map(|db| 10f64.powf(db / 10.0))
            .sum::<f64>()
            / self.enbw_bins
    }
}

/// Welch magnitude spectrum (flat-top, 50 % overlap) with segments of `round(rate/rbw)` samples.
pub fn spectrum(
    signal: &[f64],
    rate: f64,
    rbw: f64,
    phase_band: Option<(f64, f64)>,
) -> Result<Spectrum> {
    let n = (rate / rbw).round() as usize;
    if n < 2 || signal.len() < n {
        return Err(invalid(format!(
            "spectrum at {rbw:e} Hz RBW needs {n} samples, got {}",
            signal.len()
        )));
    }
    let win = flat_top_window(n);
    let wsum: f64 = win.iter().sum();
    let w2: f64 = win.iter().map(|w| w * w).sum();
    let enbw_bins = n as f64 * w2 / (wsum * wsum);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let hop = n / 2;
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= signal.len() {
        let mut buf: Vec<Complex64> = signal[start..start + n]
            .iter()
            .zip(&win)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            *a += one_sided * buf[k].norm_sqr() / (wsum * wsum);
        }
        segments += 1;
        start += hop;
    }
    let magnitude_db = acc
        .iter()
        .map(|p| 10.0 * (p / segments as f64).max(1e-300).log10())
        .collect();

    let mut first: Vec<Complex64> = signal[..n]
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    fft.process(&mut first);
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * rate / n as f64).collect();
    let phase = freqs
        .iter()
        .zip(&first)
        .map(|(&f, z)| match phase_band {
            Some((lo, hi)) if f >= lo && f <= hi => Some(z.arg()),
            _ => None,
        })
        .collect();
    Ok(Spectrum {
        freqs,
        magnitude_db,
        phase,
        enbw_bins,
        segments,
    })
}

/// Mean in-band error power (dB) of `test - reference`: the distortion floor in a band.
pub fn inband_error_db(
    reference: &[f64],
    test: &[f64],
    rate: f64,
    rbw: f64,
    band: (f64, f64),
) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(invalid("length mismatch"));
    }
    let err: Vec<f64> = reference.iter().zip(test).map(|(r, t)| t - r).collect();
    let s = spectrum(&err, rate, rbw, None)?;
    let (sum, count) = s
        .freqs
        .iter()
        .zip(&s.magnitude_db)
        .filter(|(f, _)| **f >= band.0 && **f <= band.1)
        .fold((0.0, 0usize), |(a, c), (_, db)| {
            (a + 10f64.powf(db / 10.0), c + 1)
        });
    Ok(10.0 * (sum / count.max(1) as f64).max(1e-300).log10())
}

/// One row of the (variant, constellation) results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: Variant,
    pub constellation_order: usize,
    pub sndr: Sndr,
    pub ser: f64,
    pub lsb_error_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ideal,
    Nonideal,
    Shift,
    Nn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Ideal,
        Variant::Nonideal,
        Variant::Shift,
        Variant::Nn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ideal => "ideal",
            Variant::Nonideal => "nonideal",
            Variant::Shift => "shift",
            Variant::Nn => "nn",
        }
    }
}
