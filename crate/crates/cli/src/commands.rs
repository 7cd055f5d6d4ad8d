use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use deepadc::adc::{AdcCapture, AdcConfig};
use deepadc::calibrator::{make_mixed_windows, make_windows, train, NetworkModel};
use deepadc::metrics::Variant;
use deepadc::pipeline::{evaluate_capture, generate_split, reports_csv};
use deepadc::quant::{sweep_bitwidths, sweep_csv};
use deepadc::signal::WaveformRecord;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::export::{write_capture_files, write_text};

pub const TRAIN_PREFIX: &str = "train";
pub const EVAL_PREFIX: &str = "eval";
pub const CAPTURE_EXT: &str = "cap";
pub const RECORD_EXT: &str = "wfm";

pub fn capture_name(split: &str, order: usize) -> String {
    format!("{split}_qam{order}.{CAPTURE_EXT}")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| deepadc::Error::io(dir, e).into())
}

/// Captures named `<prefix>_*.cap` in `dir`, sorted by file name.
pub fn list_captures(dir: &Path, prefix: &str) -> CliResult<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == CAPTURE_EXT)
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(&format!("{prefix}_")))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "no {prefix}_*.{CAPTURE_EXT} files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn load_capture(path: &Path) -> CliResult<AdcCapture> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "{}: capture file not found",
            path.display()
        )));
    }
    Ok(AdcCapture::load(path)?)
}

fn load_model(path: &Path) -> CliResult<NetworkModel> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "{}: model file not found",
            path.display()
        )));
    }
    Ok(NetworkModel::load(path)?)
}

fn check_compatible(model: &NetworkModel, cap: &AdcCapture, path: &Path) -> CliResult<()> {
    if model.resolution_bits != cap.config.resolution_bits
        || model.code_scale != cap.config.code_scale()
    {
        return Err(CliError::Data(format!(
            "{}: {}-bit capture does not match the {}-bit model",
            path.display(),
            cap.config.resolution_bits,
            model.resolution_bits
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ChannelRow {
    index: usize,
    skew_ps: f64,
    jitter_rms_fs: f64,
    jitter_bandwidth_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    nonlinearity_scale_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter_ripple_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filter_corner_hz: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    generated_unix: u64,
    files: &'a [String],
    channel: Vec<ChannelRow>,
    config: &'a RunConfig,
}

fn manifest(cfg: &RunConfig, adc: &AdcConfig, files: &[String]) -> CliResult<String> {
    let channel = adc
        .channels
        .iter()
        .enumerate()
        .map(|(index, ch)| ChannelRow {
            index,
            skew_ps: ch.skew * 1e12,
            jitter_rms_fs: ch.jitter_rms * 1e15,
            jitter_bandwidth_hz: ch.jitter_bandwidth,
            nonlinearity_scale_v: ch.nonlinearity_scale,
            filter_ripple_db: ch.memory_filter.as_ref().map(|f| f.ripple_db),
            filter_corner_hz: ch.memory_filter.as_ref().map(|f| f.corner_hz),
        })
        .collect();
    let generated_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let m = Manifest {
        generated_unix,
        files,
        channel,
        config: cfg,
    };
    toml::to_string(&m).map_err(|e| CliError::Data(format!("manifest: {e}")))
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let adc = AdcConfig::draw(&cfg.adc, cfg.ofdm.analog_rate)?;
    cfg.ofdm.validate(adc.aggregate_rate())?;
    create_dir(out)?;
    let ds = &cfg.dataset;
    let mut files = Vec::new();
    for (split, n_symbols, seed) in [
        (TRAIN_PREFIX, ds.train_symbols, ds.train_seed),
        (EVAL_PREFIX, ds.eval_symbols, ds.eval_seed),
    ] {
        log::info!(
            "generating {split} split: {} records x {n_symbols} symbols",
            ds.constellations.len()
        );
        let records = generate_split(&cfg.ofdm, &adc, &ds.constellations, n_symbols, seed)?;
        for (rec, cap) in &records {
            let order = rec.constellation_order;
            let cap_name = capture_name(split, order);
            let rec_name = format!("{split}_qam{order}.{RECORD_EXT}");
            rec.save(&out.join(&rec_name))?;
            cap.save(&out.join(&cap_name))?;
            if cap.clipped_nonideal + cap.clipped_ideal > 0 {
                log::warn!(
                    "{cap_name}: {} non-ideal and {} ideal samples clipped",
                    cap.clipped_nonideal,
                    cap.clipped_ideal
                );
            }
            files.push(rec_name);
            files.push(cap_name);
        }
    }
    let text = manifest(cfg, &adc, &files)?;
    write_text(&out.join("manifest.toml"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn train_report_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("train.csv")
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, model_out: &Path, resume: bool) -> CliResult<()> {
    let paths = list_captures(dataset, TRAIN_PREFIX)?;
    let init = if resume {
        let m = load_model(model_out)?;
        log::info!("resuming from {}", model_out.display());
        Some(m)
    } else {
        None
    };
    let captures = paths
        .iter()
        .map(|p| load_capture(p))
        .collect::<CliResult<Vec<_>>>()?;
    let bits = captures[0].config.resolution_bits;
    if captures.iter().any(|c| c.config.resolution_bits != bits) {
        return Err(CliError::Data("training captures mix resolutions".into()));
    }
    if let Some(m) = &init {
        check_compatible(m, &captures[0], &paths[0])?;
    }
    let mut ds = make_mixed_windows(&captures, cfg.window, cfg.train.seed)?;
    if let Some(n) = cfg.dataset.max_train_windows {
        ds.truncate(n);
    }
    log::info!(
        "training on {} windows from {} captures",
        ds.len(),
        captures.len()
    );
    let (model, report) = train(&ds, &cfg.train, init, bits, |e| {
        log::info!(
            "epoch {} train {:.4e} val {:.4e} ({:.1} s)",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.seconds
        )
    })?;
    if let Some(dir) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(model_out)?;
    write_text(&train_report_path(model_out), &report.to_csv())?;
    log::info!(
        "best epoch {} (validation {:.4e}); model written to {}",
        report.best_epoch,
        report.best_val_loss(),
        model_out.display()
    );
    Ok(())
}

/// Capture files named by `inputs`; directories contribute their evaluation captures.
fn resolve_captures(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_captures(p, EVAL_PREFIX)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    model_path: &Path,
    captures: &[PathBuf],
    out: &Path,
) -> CliResult<()> {
    let model = load_model(model_path)?;
    let paths = resolve_captures(captures)?;
    let mut rows = Vec::new();
    for path in &paths {
        let cap = load_capture(path)?;
        check_compatible(&model, &cap, path)?;
        let rec_path = path.with_extension(RECORD_EXT);
        let analog = if rec_path.is_file() {
            Some(WaveformRecord::load(&rec_path)?)
        } else {
            None
        };
        if analog.is_none() {
            log::warn!(
                "{}: no analog record; ideal SNDR is reported as capped",
                rec_path.display()
            );
        }
        let ev = evaluate_capture(&model, &cap, analog.as_ref(), &cfg.ofdm)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("capture");
        write_capture_files(
            &out.join(stem),
            &ev,
            &cap,
            analog.as_ref(),
            &cfg.ofdm,
            &cfg.eval,
        )?;
        for v in Variant::ALL {
            let r = ev.report(v);
            log::info!(
                "{stem} {:>8}: ENOB {:6.2} bits, SER {:.3e}",
                v.label(),
                r.sndr.enob,
                r.ser
            );
        }
        rows.extend(ev.reports);
    }
    let table = reports_csv(&rows);
    write_text(&out.join("enob_ser.csv"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_quant_sweep(
    cfg: &RunConfig,
    model_path: &Path,
    capture: &Path,
    calibration: &Path,
    out: &Path,
) -> CliResult<()> {
    let model = load_model(model_path)?;
    let eval = load_capture(capture)?;
    check_compatible(&model, &eval, capture)?;
    let calib = load_capture(calibration)?;
    check_compatible(&model, &calib, calibration)?;
    let ds = make_windows(&calib, model.window)?;
    let n = cfg.quant.calibration_windows.min(ds.len());
    let ids: Vec<usize> = (0..n).map(|i| i * ds.len() / n).collect();
    let (x, _) = ds.gather(&ids);
    let rows = sweep_bitwidths(&model, &cfg.quant.bits, cfg.quant.lut_size, &x, n, &eval)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let csv = sweep_csv(&rows);
    write_text(out, &csv)?;
    print!("{csv}");
    Ok(())
}
