//! QAM-OFDM passband test signals.

pub mod ofdm;
pub mod qam;
pub mod waveform;

pub use ofdm::{
    complex_envelope, demodulate_samples, generate_record, ofdm_baseband, ofdm_demodulate,
    ofdm_modulate, papr_ccdf, papr_db, papr_of, OfdmConfig, PaprMode,
};
pub use qam::{qam_map, qam_slice, QamConstellation, SUPPORTED_ORDERS};
pub use waveform::{Samples, WaveformRecord};
