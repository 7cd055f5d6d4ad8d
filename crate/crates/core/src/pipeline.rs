//! Record generation and per-capture scoring shared by the command line and tests.

use serde::{Deserialize, Serialize};

use crate::adc::{simulate_interleaved, AdcCapture, AdcConfig};
use crate::baseline::{shift_correct, DelayEstimate};
use crate::calibrator::{infer_stream, Predictor};
use crate::error::{invalid, Error, Result};
use crate::metrics::{
    lsb_error_trace, rms, sndr_enob, symbol_error_rate, MetricsReport, Sndr, Variant,
};
use crate::par;
use crate::signal::{
    demodulate_samples, generate_record, qam_slice, OfdmConfig, QamConstellation, WaveformRecord,
    SUPPORTED_ORDERS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub constellations: Vec<usize>,
    /// OFDM symbols per training record.
    pub train_symbols: usize,
    /// OFDM symbols per held-out evaluation record.
    pub eval_symbols: usize,
    /// Record `i` of a split uses seed `base + i`.
    pub train_seed: u64,
    pub eval_seed: u64,
    /// Cap on training windows after shuffling; all windows when absent.
    pub max_train_windows: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            constellations: SUPPORTED_ORDERS.to_vec(),
            train_symbols: 200,
            eval_symbols: 16,
            train_seed: 100,
            eval_seed: 900,
            max_train_windows: None,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_symbols == 0 || self.eval_symbols == 0 {
            return Err(Error::Config("symbol counts must be positive".into()));
        }
        if self.constellations.is_empty() {
            return Err(Error::Config(
                "at least one constellation is required".into(),
            ));
        }
        for &o in &self.constellations {
            QamConstellation::new(o).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One analog record per constellation and its capture, generated in parallel.
pub fn generate_split(
    ofdm: &OfdmConfig,
    adc: &AdcConfig,
    constellations: &[usize],
    n_symbols: usize,
    seed_base: u64,
) -> Result<Vec<(WaveformRecord, AdcCapture)>> {
    if n_symbols == 0 {
        return Err(invalid("a record needs at least one symbol"));
    }
    par::map_indexed(constellations.len(), |i| -> Result<_> {
        let c = QamConstellation::new(constellations[i])?;
        let rec = generate_record(&c, n_symbols, ofdm, seed_base + i as u64)?;
        let cap = simulate_interleaved(&rec, adc)?;
        Ok((rec, cap))
    })
    .into_iter()
    .collect()
}

/// The analog input on the aggregate sampling grid, in normalised code units.
pub fn analog_reference(record: &WaveformRecord, capture: &AdcCapture) -> Result<Vec<f64>> {
    let x = record.real()?;
    let ratio = record.sample_rate / capture.sample_rate();
    let r = ratio.round() as usize;
    if r == 0 || (ratio - r as f64).abs() > 1e-9 * ratio || x.len() != capture.len() * r {
        return Err(invalid("record and capture are not on commensurate grids"));
    }
    let volts_per_unit = capture.config.code_scale() * capture.config.lsb();
    Ok((0..capture.len())
        .map(|k| x[k * r] / volts_per_unit)
        .collect())
}

/// Normalised sample streams of every variant, all the capture's length.
#[derive(Debug, Clone)]
pub struct VariantStreams {
    pub ideal: Vec<f64>,
    pub nonideal: Vec<f64>,
    pub shift: Vec<f64>,
    pub nn: Vec<f64>,
}

impl VariantStreams {
    pub fn get(&self, v: Variant) -> &[f64] {
        match v {
            Variant::Ideal => &self.ideal,
            Variant::Nonideal => &self.nonideal,
            Variant::Shift => &self.shift,
            Variant::Nn => &self.nn,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaptureEvaluation {
    pub constellation_order: usize,
    pub streams: VariantStreams,
    pub delay: DelayEstimate,
    /// One row per variant, in [`Variant::ALL`] order.
    pub reports: Vec<MetricsReport>,
}

impl CaptureEvaluation {
    pub fn report(&self, v: Variant) -> &MetricsReport {
        self.reports
            .iter()
            .find(|r| r.variant == v)
            .expect("every variant is scored")
    }
}

/// Symbol decisions from a normalised stream.
pub fn detect_symbols(
    stream: &[f64],
    capture: &AdcCapture,
    ofdm: &OfdmConfig,
) -> Result<Vec<usize>> {
    let volts = capture.normalized_to_volts(stream);
    let est = demodulate_samples(&volts, capture.sample_rate(), capture.source.scale, ofdm)?;
    let c = QamConstellation::new(capture.source.constellation_order)?;
    Ok(qam_slice(&est, &c))
}

/// Scores the ideal, non-ideal, shift-corrected and network-corrected streams.
///
/// SNDR is measured against the ideal converter, except for the ideal stream
/// itself which is measured against `analog` when given (and reports the cap otherwise).
pub fn evaluate_capture(
    model: &impl Predictor,
    capture: &AdcCapture,
    analog: Option<&WaveformRecord>,
    ofdm: &OfdmConfig,
) -> Result<CaptureEvaluation> {
    let ideal = capture.normalize(&capture.ideal_codes);
    let nonideal = capture.normalize(&capture.nonideal_codes);
    let (shift, delay) = shift_correct(&ideal, &nonideal)?;
    let nn = infer_stream(model, &capture.nonideal_codes)?.splice_into(&nonideal);
    let streams = VariantStreams {
        ideal,
        nonideal,
        shift,
        nn,
    };
    let ideal_ref = match analog {
        Some(rec) => Some(analog_reference(rec, capture)?),
        None => None,
    };
    let bits = capture.config.resolution_bits;
    let mut reports = Vec::with_capacity(4);
    for v in Variant::ALL {
        let s = streams.get(v);
        let sndr: Sndr = match (v, &ideal_ref) {
            (Variant::Ideal, Some(r)) => sndr_enob(r, s)?,
            _ => sndr_enob(&streams.ideal, s)?,
        };
        let rx = detect_symbols(s, capture, ofdm)?;
        let ser = symbol_error_rate(&capture.source.tx_indices, &rx)?;
        let trace = lsb_error_trace(&capture.ideal_codes, s, bits)?;
        reports.push(MetricsReport {
            variant: v,
            constellation_order: capture.source.constellation_order,
            sndr,
            ser,
            lsb_error_rms: rms(&trace),
        });
    }
    Ok(CaptureEvaluation {
        constellation_order: capture.source.constellation_order,
        streams,
        delay,
        reports,
    })
}

pub fn reports_csv(rows: &[MetricsReport]) -> String {
    let mut s =
        String::from("variant,constellation,sndr_db,enob_bits,sndr_capped,ser,lsb_error_rms_lsb\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{},{:e},{:.4}\n",
            r.variant.label(),
            r.constellation_order,
            r.sndr.sndr_db,
            r.sndr.enob,
            r.sndr.capped,
            r.ser,
            r.lsb_error_rms
        ));
    }
    s
}
