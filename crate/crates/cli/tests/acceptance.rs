//! Acceptance criteria 1-10. Each test prints one PASS/FAIL line to stderr,
//! outside the harness's output capture, and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use deepadc::adc::{
    design_chebyshev1, gen_timing_offsets, simulate_interleaved, AdcCapture, AdcConfig, AdcSettings,
};
use deepadc::baseline::{apply_fractional_delay, estimate_delay};
use deepadc::calibrator::{
    build_network, make_mixed_windows, make_windows, train, NetworkModel, TrainConfig, WindowConfig,
};
use deepadc::metrics::{sndr_enob, Variant};
use deepadc::nn::gradcheck::randomized_suite;
use deepadc::nn::{Optimizer, Tensor};
use deepadc::pipeline::{
    analog_reference, detect_symbols, evaluate_capture, generate_split, CaptureEvaluation,
    DatasetConfig,
};
use deepadc::quant::{sweep_bitwidths, sweep_csv};
use deepadc::signal::{
    generate_record, OfdmConfig, QamConstellation, Samples, WaveformRecord, SUPPORTED_ORDERS,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

/// Serialises the criteria so each runtime bound measures its own work.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "[acceptance] criterion {n:>2} {name}: {verdict} ({detail})"
    );
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (
        e <= limit,
        format!("{:.1} s of {} s", e.as_secs_f64(), limit.as_secs()),
    )
}

fn default_adc() -> AdcConfig {
    AdcConfig::draw(&AdcSettings::default(), OfdmConfig::default().analog_rate).unwrap()
}

fn cheb_t(n: usize, x: f64) -> f64 {
    if x.abs() <= 1.0 {
        (n as f64 * x.acos()).cos()
    } else {
        (n as f64 * x.abs().acosh()).cosh() * if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 }
    }
}

#[test]
fn criterion_01_filter_oracle() {
    let _g = exclusive();
    let t = Instant::now();
    let rate = OfdmConfig::default().analog_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ripple = rng.random_range(1.5..=6.0);
        let corner = rng.random_range(5e9..=8e9);
        let sos = design_chebyshev1(8, ripple, corner, rate).unwrap();
        let eps2 = 10f64.powf(ripple / 10.0) - 1.0;
        for i in 0..1000 {
            let f = corner * i as f64 / 999.0;
            let w = (PI * f / rate).tan() / (PI * corner / rate).tan();
            let tn = cheb_t(8, w);
            let want = -10.0 * (1.0 + eps2 * tn * tn).log10();
            worst = worst.max((sos.magnitude_db(f, rate) - want).abs());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    let pass = worst < 0.05 && fast;
    report(
        1,
        "filter oracle",
        pass,
        &format!("worst deviation {worst:.2e} dB over 20 designs, {time}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_timing_oracle() {
    let _g = exclusive();
    let t = Instant::now();
    let cfg = default_adc();
    let skews: Vec<f64> = cfg.channels.iter().map(|c| c.skew).collect();
    let spread = skews.iter().cloned().fold(f64::MIN, f64::max)
        - skews.iter().cloned().fold(f64::MAX, f64::min);
    let spread_ok = (spread - 12e-12).abs() <= 12e-12 * 1e-12;

    let n = 1_000_000;
    let offsets = gen_timing_offsets(&cfg, n, 99).unwrap();
    let mut worst_rms = 0.0f64;
    let mut worst_high = 0.0f64;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let df = cfg.channel_rate / n as f64;
    for (m, off) in offsets.iter().enumerate() {
        let j: Vec<f64> = off.iter().map(|o| o - cfg.channels[m].skew).collect();
        let rms = (j.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        worst_rms = worst_rms.max((rms / 390e-15 - 1.0).abs());
        let mut buf: Vec<Complex64> = j.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let (mut high, mut total) = (0.0, 0.0);
        for (k, z) in buf.iter().enumerate().take(n / 2 + 1) {
            total += z.norm_sqr();
            if k as f64 * df > 40e6 {
                high += z.norm_sqr();
            }
        }
        worst_high = worst_high.max(high / total);
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    let pass = spread_ok && worst_rms < 0.02 && worst_high < 0.01 && fast;
    report(
        2,
        "timing oracle",
        pass,
        &format!(
            "skew spread {:.6} ps, worst jitter rms error {:.2}%, worst power above 40 MHz {:.3}%, {time}",
            spread * 1e12,
            worst_rms * 100.0,
            worst_high * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_ideal_chain_sine() {
    let _g = exclusive();
    let t = Instant::now();
    let adc = AdcConfig::ideal(&AdcSettings::default());
    let rate = OfdmConfig::default().analog_rate;
    let n = 65536;
    // 1 MHz bins: 1.3 GHz is coherent
    let amp = 0.5 - adc.lsb();
    let x = (0..n)
        .map(|i| amp * (2.0 * PI * 1.3e9 * i as f64 / rate).sin())
        .collect();
    let rec = WaveformRecord {
        samples: Samples::Real(x),
        sample_rate: rate,
        tx_indices: vec![],
        constellation_order: 256,
        n_subcarriers: 128,
        seed: 0,
        scale: 1.0,
    };
    let cap = simulate_interleaved(&rec, &adc).unwrap();
    let got = sndr_enob(
        &analog_reference(&rec, &cap).unwrap(),
        &cap.normalize(&cap.ideal_codes),
    )
    .unwrap();
    let (fast, time) = within(t, Duration::from_secs(10));
    let pass = (got.enob - 13.0).abs() <= 0.2 && fast;
    report(
        3,
        "ideal-chain sine",
        pass,
        &format!("ENOB {:.3} (SNDR {:.2} dB), {time}", got.enob, got.sndr_db),
    );
    assert!(pass);
}

#[test]
fn criterion_04_gradient_suite() {
    let _g = exclusive();
    let t = Instant::now();
    let worst = randomized_suite(100, 4);
    let max = worst.iter().fold(0.0f64, |m, (_, e)| m.max(*e));
    let (fast, time) = within(t, Duration::from_secs(300));
    let pass = max < 1e-4 && fast;
    let per: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    report(
        4,
        "gradient suite",
        pass,
        &format!("{}; {time}", per.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_05_overfit() {
    let _g = exclusive();
    let t = Instant::now();
    let ofdm = OfdmConfig::default();
    let c = QamConstellation::new(256).unwrap();
    let cap =
        simulate_interleaved(&generate_record(&c, 1, &ofdm, 42).unwrap(), &default_adc()).unwrap();
    let window = WindowConfig::default();
    let ds = make_windows(&cap, window).unwrap();
    let ids: Vec<usize> = (0..256).map(|i| i * 3).collect();
    let (x, y) = ds.gather(&ids);
    let wl = window.window_length;
    let xb = Tensor::new(&[256, wl, 1], x).unwrap();
    let yb = Tensor::new(&[256, 1], y.clone()).unwrap();
    let mut model = build_network(window, 13, 1).unwrap();
    let mut opt = Optimizer::adam(model.param_count(), 1e-3);
    let train_mse = |m: &NetworkModel| {
        let out = m.network.clone().forward(&xb, true).unwrap();
        out.data()
            .iter()
            .zip(&y)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / 256.0
    };
    let mut steps = 0;
    let mut final_mse = f64::INFINITY;
    while steps < 2000 {
        // the returned loss precedes the update, so confirm on the new weights
        let before = model.network.train_step(&xb, &yb, &mut opt).unwrap();
        steps += 1;
        if before < 2e-5 {
            final_mse = train_mse(&model);
            if final_mse < 1e-5 {
                break;
            }
        }
    }
    if !final_mse.is_finite() || steps == 2000 {
        final_mse = train_mse(&model);
    }
    let (fast, time) = within(t, Duration::from_secs(300));
    let pass = final_mse < 1e-5 && fast;
    report(
        5,
        "overfit",
        pass,
        &format!("train MSE {final_mse:.2e} after {steps} full-batch Adam steps, {time}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_baseline_oracle() {
    let _g = exclusive();
    // dense in-band multitone with whole cycles over the record, delayed in closed form
    let n = 8192;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tones: Vec<(f64, f64, f64)> = (0..64)
        .map(|_| {
            (
                rng.random_range(0.01..0.05),
                rng.random_range(800..1800) as f64,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let wave = |d: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 - d;
                tones
                    .iter()
                    .map(|(a, k, p)| a * (2.0 * PI * k * t / n as f64 + p).sin())
                    .sum()
            })
            .collect()
    };
    let x = wave(0.0);
    let mut worst_oracle = 0.0f64;
    let mut delays: Vec<f64> = (0..=32).map(|i| -8.0 + 0.5 * i as f64).collect();
    delays.extend((0..32).map(|_| rng.random_range(-8.0..=8.0)));
    for &d in &delays {
        let est = estimate_delay(&x, &wave(d)).unwrap();
        worst_oracle = worst_oracle.max((est.delay - d).abs());
    }

    // round trip on a default capture, and the baseline never hurts
    let ofdm = OfdmConfig::default();
    let adc = default_adc();
    let split = generate_split(&ofdm, &adc, &SUPPORTED_ORDERS, 4, 600).unwrap();
    let ideal = split[2].1.normalize(&split[2].1.ideal_codes);
    let mut worst_record = 0.0f64;
    for &d in &[-7.3, -2.5, 0.4, 5.75] {
        let est = estimate_delay(&apply_fractional_delay(&ideal, d).unwrap(), &ideal).unwrap();
        worst_record = worst_record.max((est.delay + d).abs());
    }
    let mut gains = Vec::new();
    for (_, cap) in &split {
        let i = cap.normalize(&cap.ideal_codes);
        let raw = cap.normalize(&cap.nonideal_codes);
        let (shifted, _) = deepadc::baseline::shift_correct(&i, &raw).unwrap();
        gains.push(sndr_enob(&i, &shifted).unwrap().enob - sndr_enob(&i, &raw).unwrap().enob);
    }
    let min_gain = gains.iter().cloned().fold(f64::MAX, f64::min);
    let pass = worst_oracle <= 0.05 && worst_record <= 0.05 && min_gain >= 0.0;
    report(
        6,
        "baseline oracle",
        pass,
        &format!(
            "worst delay error {worst_oracle:.4} samples over {} oracle delays, {worst_record:.4} on a default record, \
             smallest shift gain {min_gain:.3} bits",
            delays.len()
        ),
    );
    assert!(pass);
}

/// Budget of the end-to-end run exercised by the suite.
struct Budget {
    train_symbols: usize,
    epochs: usize,
}

const REDUCED: Budget = Budget {
    train_symbols: 20,
    epochs: 2,
};
const FULL: Budget = Budget {
    train_symbols: 200,
    epochs: 10,
};

struct Trained {
    model: NetworkModel,
    evals: Vec<CaptureEvaluation>,
    train_256: AdcCapture,
    eval_256: AdcCapture,
    seconds: f64,
}

fn train_and_evaluate(b: &Budget) -> Trained {
    let t = Instant::now();
    let ofdm = OfdmConfig::default();
    let adc = default_adc();
    let ds_cfg = DatasetConfig::default();
    let train_split = generate_split(
        &ofdm,
        &adc,
        &ds_cfg.constellations,
        b.train_symbols,
        ds_cfg.train_seed,
    )
    .unwrap();
    let eval_split = generate_split(
        &ofdm,
        &adc,
        &ds_cfg.constellations,
        ds_cfg.eval_symbols,
        ds_cfg.eval_seed,
    )
    .unwrap();
    let caps: Vec<AdcCapture> = train_split.iter().map(|(_, c)| c.clone()).collect();
    let ds = make_mixed_windows(&caps, WindowConfig::default(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: b.epochs,
        ..TrainConfig::default()
    };
    let (model, _) = train(&ds, &cfg, None, adc.resolution_bits, |_| {}).unwrap();
    let evals = eval_split
        .iter()
        .map(|(rec, cap)| evaluate_capture(&model, cap, Some(rec), &ofdm).unwrap())
        .collect();
    let at = |split: &[(WaveformRecord, AdcCapture)]| {
        split
            .iter()
            .find(|(_, c)| c.source.constellation_order == 256)
            .unwrap()
            .1
            .clone()
    };
    Trained {
        model,
        evals,
        train_256: at(&train_split),
        eval_256: at(&eval_split),
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn shared_run() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| train_and_evaluate(&REDUCED))
}

fn check_end_to_end(label: &str, run: &Trained) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut gains = Vec::new();
    for e in &run.evals {
        let nn = e.report(Variant::Nn).sndr.enob;
        let non = e.report(Variant::Nonideal).sndr.enob;
        let shift = e.report(Variant::Shift).sndr.enob;
        pass &= nn >= non + 2.0 && nn > shift;
        gains.push(nn - non);
        parts.push(format!(
            "{}: nn {nn:.2} / nonideal {non:.2} / shift {shift:.2}",
            e.constellation_order
        ));
    }
    let e256 = run
        .evals
        .iter()
        .find(|e| e.constellation_order == 256)
        .unwrap();
    let ser_nn = e256.report(Variant::Nn).ser;
    let ser_non = e256.report(Variant::Nonideal).ser;
    pass &= if ser_non > 0.0 {
        ser_nn < ser_non
    } else {
        ser_nn <= ser_non
    };
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    report(
        7,
        label,
        pass,
        &format!(
            "{}; 256-QAM SER nn {ser_nn:.4} vs nonideal {ser_non:.4}; mean gain {mean_gain:.2} bits (5-bit stretch target not asserted); {:.0} s",
            parts.join(", "),
            run.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_end_to_end() {
    let _g = exclusive();
    check_end_to_end(
        "end-to-end (reduced budget: 20 symbols per constellation, 2 epochs)",
        shared_run(),
    );
}

#[test]
#[ignore = "full desk-scale budget, several hours on one core"]
fn criterion_07_end_to_end_full_budget() {
    let _g = exclusive();
    check_end_to_end(
        "end-to-end (full budget: 200 symbols per constellation, 10 epochs)",
        &train_and_evaluate(&FULL),
    );
}

#[test]
fn criterion_08_round_trip_ser() {
    let _g = exclusive();
    let ofdm = OfdmConfig::default();
    let adc = AdcConfig::ideal(&AdcSettings::default());
    let c = QamConstellation::new(256).unwrap();
    let rec = generate_record(&c, 80, &ofdm, 8).unwrap();
    let cap = simulate_interleaved(&rec, &adc).unwrap();
    let rx = detect_symbols(&cap.normalize(&cap.ideal_codes), &cap, &ofdm).unwrap();
    let errors = rx
        .iter()
        .zip(&rec.tx_indices)
        .filter(|(a, b)| a != b)
        .count();
    let pass = errors == 0 && rx.len() >= 10_000 && cap.clipped_ideal == 0;
    report(
        8,
        "round-trip SER",
        pass,
        &format!("{errors} errors in {} symbols", rx.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_09_quantization() {
    let _g = exclusive();
    let run = shared_run();
    let t = Instant::now();
    let ds = make_windows(&run.train_256, run.model.window).unwrap();
    let n = 4096.min(ds.len());
    let ids: Vec<usize> = (0..n).map(|i| i * ds.len() / n).collect();
    let (calib, _) = ds.gather(&ids);
    let sweep =
        |bits: &[u32]| sweep_bitwidths(&run.model, bits, 256, &calib, n, &run.eval_256).unwrap();
    let rows = sweep(&[24, 16]);
    let float = rows[0].sndr.enob;
    let (e24, e16) = (rows[1].sndr.enob, rows[2].sndr.enob);
    let csv = sweep_csv(&sweep(&[16, 12, 10, 8]));
    let lines: Vec<&str> = csv.lines().collect();
    let widths: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let csv_ok = lines[0].starts_with("bits,") && widths == ["0", "16", "12", "10", "8"];
    let (fast, time) = within(t, Duration::from_secs(600));
    let pass = (e24 - float).abs() <= 0.1 && (e16 - float).abs() <= 0.5 && csv_ok && fast;
    report(
        9,
        "quantization",
        pass,
        &format!("float {float:.3}, 24-bit {e24:.3}, 16-bit {e16:.3} bits; sweep rows {widths:?}; {time}"),
    );
    assert!(pass);
}

const TINY_CONFIG: &str = r#"
[dataset]
constellations = [64, 256]
train_symbols = 2
eval_symbols = 4
max_train_windows = 1500

[train]
epochs = 1
batch_size = 128
"#;

fn run_cli(root: &Path, config: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_deepadc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("DEEPADC_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "deepadc {args:?} failed with {status}");
}

/// Every file under `dir` with its bytes; run-time fields are blanked.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(&p).unwrap();
            let bytes = if name.ends_with("manifest.toml") {
                let s = String::from_utf8(bytes).unwrap();
                s.lines()
                    .filter(|l| !l.starts_with("generated_unix"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes()
            } else if name.ends_with(".train.csv") {
                // drop the wall-clock column
                let s = String::from_utf8(bytes).unwrap();
                s.lines()
                    .map(|l| l.rsplit_once(',').unwrap().0)
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes()
            } else {
                bytes
            };
            out.push((name, bytes));
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_determinism() {
    let _g = exclusive();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        run_cli(&root, &config, &["gen"]);
        run_cli(&root, &config, &["train"]);
        run_cli(&root, &config, &["eval"]);
        snaps.push(snapshot(&root));
    }
    let names: Vec<&str> = snaps[0].iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = snaps[0]
        .iter()
        .zip(&snaps[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let has = |suffix: &str| names.iter().any(|n| n.ends_with(suffix));
    let pass = snaps[0].len() == snaps[1].len()
        && differing.is_empty()
        && has(".cap")
        && has(".wfm")
        && has("model.dam")
        && has("enob_ser.csv");
    report(
        10,
        "determinism",
        pass,
        &format!(
            "{} files compared across two gen/train/eval runs, differing: {differing:?}",
            names.len()
        ),
    );
    assert!(pass);
}
