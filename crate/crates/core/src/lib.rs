//! Simulation of a wideband time-interleaved ADC driven by QAM-OFDM signals,
//! and a Conv1d+LSTM post-processor that learns to undo its impairments.

pub mod adc;
pub mod baseline;
pub mod calibrator;
pub mod container;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod quant;
pub mod signal;

pub use error::{Error, Result};
