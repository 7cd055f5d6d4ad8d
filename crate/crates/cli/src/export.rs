//! Plot-ready CSV files. Every file starts with one header line naming columns and units.

use std::fmt::Write as _;
use std::path::Path;

use deepadc::adc::AdcCapture;
use deepadc::container::write_atomic;
use deepadc::metrics::{lsb_error_trace, spectrum, Variant, EDGE_EXCLUSION};
use deepadc::pipeline::CaptureEvaluation;
use deepadc::signal::{papr_ccdf, papr_db, OfdmConfig, PaprMode, WaveformRecord};

use crate::config::EvalConfig;
use crate::error::CliResult;

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Two columns `x`, `y` under `header`.
pub fn write_xy(
    path: &Path,
    header: &str,
    xy: impl IntoIterator<Item = (f64, f64)>,
) -> CliResult<()> {
    let mut s = format!("{header}\n");
    for (x, y) in xy {
        let _ = writeln!(s, "{x},{y}");
    }
    write_text(path, &s)
}

/// Every per-capture file under `dir`.
pub fn write_capture_files(
    dir: &Path,
    ev: &CaptureEvaluation,
    capture: &AdcCapture,
    analog: Option<&WaveformRecord>,
    ofdm: &OfdmConfig,
    cfg: &EvalConfig,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| deepadc::Error::io(dir, e))?;
    write_text(
        &dir.join("metrics.csv"),
        &deepadc::pipeline::reports_csv(&ev.reports),
    )?;

    let rate = capture.sample_rate();
    let lo = EDGE_EXCLUSION.min(capture.len());
    let hi = (lo + cfg.overlay_samples).min(capture.len());
    let mut s = String::from("sample,time_ns,ideal_norm,nonideal_norm,shift_norm,nn_norm\n");
    for k in lo..hi {
        let _ = write!(s, "{k},{}", k as f64 / rate * 1e9);
        for v in Variant::ALL {
            let _ = write!(s, ",{}", ev.streams.get(v)[k]);
        }
        s.push('\n');
    }
    write_text(&dir.join("overlay.csv"), &s)?;

    let bits = capture.config.resolution_bits;
    let band = ofdm.band_edges();
    for v in Variant::ALL {
        let stream = ev.streams.get(v);
        let trace = lsb_error_trace(&capture.ideal_codes, stream, bits)?;
        write_xy(
            &dir.join(format!("lsb_error_{}.csv", v.label())),
            "sample,error_lsb",
            trace.iter().enumerate().map(|(k, e)| (k as f64, *e)),
        )?;
        match spectrum(stream, rate, cfg.rbw_hz, Some(band)) {
            Ok(sp) => {
                write_xy(
                    &dir.join(format!("spectrum_{}.csv", v.label())),
                    "frequency_hz,magnitude_db",
                    sp.freqs
                        .iter()
                        .copied()
                        .zip(sp.magnitude_db.iter().copied()),
                )?;
                write_xy(
                    &dir.join(format!("phase_{}.csv", v.label())),
                    "frequency_hz,phase_rad",
                    sp.freqs
                        .iter()
                        .zip(&sp.phase)
                        .filter_map(|(f, p)| p.map(|p| (*f, p))),
                )?;
            }
            Err(e) => log::warn!("skipping spectra for {}: {e}", dir.display()),
        }
    }

    if let Some(rec) = analog {
        let values = papr_db(rec, ofdm, PaprMode::PerSymbol)?;
        let n = (cfg.papr_max_db / cfg.papr_step_db).round() as usize;
        let thresholds: Vec<f64> = (0..=n).map(|i| i as f64 * cfg.papr_step_db).collect();
        write_xy(
            &dir.join("papr_ccdf.csv"),
            "papr_db,ccdf",
            papr_ccdf(&values, &thresholds),
        )?;
    }
    Ok(())
}
