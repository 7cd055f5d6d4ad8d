#![allow(dead_code)]

use deepadc::adc::{simulate_interleaved, AdcCapture, AdcConfig, AdcSettings};
use deepadc::calibrator::{
    build_network, make_windows, train_mode_loss, NetworkModel, WindowConfig,
};
use deepadc::signal::{generate_record, OfdmConfig, QamConstellation, WaveformRecord};

pub fn default_adc() -> AdcConfig {
    AdcConfig::draw(&AdcSettings::default(), OfdmConfig::default().analog_rate).unwrap()
}

pub fn record(order: usize, n_symbols: usize, seed: u64) -> WaveformRecord {
    let c = QamConstellation::new(order).unwrap();
    generate_record(&c, n_symbols, &OfdmConfig::default(), seed).unwrap()
}

pub fn capture_with(
    adc: &AdcConfig,
    order: usize,
    n_symbols: usize,
    seed: u64,
) -> (WaveformRecord, AdcCapture) {
    let rec = record(order, n_symbols, seed);
    let cap = simulate_interleaved(&rec, adc).unwrap();
    (rec, cap)
}

pub fn capture(order: usize, n_symbols: usize, seed: u64) -> AdcCapture {
    capture_with(&default_adc(), order, n_symbols, seed).1
}

/// Untrained network whose batch-norm statistics come from train-mode passes over `cap`.
pub fn warmed_model(cap: &AdcCapture, seed: u64) -> NetworkModel {
    let mut model =
        build_network(WindowConfig::default(), cap.config.resolution_bits, seed).unwrap();
    let ds = make_windows(cap, model.window).unwrap();
    for b in 0..8 {
        let ids: Vec<usize> = (0..64).map(|i| (b * 97 + i * 13) % ds.len()).collect();
        train_mode_loss(&mut model, &ds, &ids).unwrap();
    }
    model
}

/// A capture built directly from code streams.
pub fn synthetic_capture(nonideal: Vec<i16>, ideal: Vec<i16>) -> AdcCapture {
    use deepadc::adc::CaptureSource;
    AdcCapture {
        nonideal_codes: nonideal,
        ideal_codes: ideal,
        config: AdcConfig::ideal(&AdcSettings::default()),
        source: CaptureSource {
            constellation_order: 64,
            n_subcarriers: 128,
            seed: 0,
            scale: 1.0,
            tx_indices: vec![],
        },
        clipped_nonideal: 0,
        clipped_ideal: 0,
    }
}
