use std::path::{Path, PathBuf};

use deepadc::adc::AdcSettings;
use deepadc::calibrator::{TrainConfig, WindowConfig};
use deepadc::pipeline::DatasetConfig;
use deepadc::quant::{QuantScheme, MAX_BITS, MIN_BITS};
use deepadc::signal::OfdmConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Overrides `output_dir` from the configuration file.
pub const OUTPUT_ROOT_ENV: &str = "DEEPADC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: Vec<u32>,
    pub lut_size: usize,
    pub calibration_windows: usize,
    /// Constellation whose evaluation capture is swept when none is given.
    pub constellation: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            bits: vec![16, 12, 10, 8],
            lut_size: 256,
            calibration_windows: 4096,
            constellation: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples written to the time-domain overlay.
    pub overlay_samples: usize,
    pub rbw_hz: f64,
    pub papr_max_db: f64,
    pub papr_step_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            overlay_samples: 512,
            rbw_hz: 1e6,
            papr_max_db: 14.0,
            papr_step_db: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub ofdm: OfdmConfig,
    pub adc: AdcSettings,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub quant: QuantConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dataset.validate()?;
        self.window.validate()?;
        self.train.validate()?;
        let aggregate = self.adc.n_channels as f64 * self.adc.channel_rate;
        self.ofdm.validate(aggregate)?;
        if self.quant.bits.is_empty() {
            return Err(CliError::Usage("quant.bits must not be empty".into()));
        }
        for &b in &self.quant.bits {
            QuantScheme {
                weight_bits: b,
                activation_bits: b,
                lut_size: self.quant.lut_size,
            }
            .validate()?;
        }
        if self.quant.calibration_windows < 1000 {
            return Err(CliError::Usage(format!(
                "quant.calibration_windows must be at least 1000 (bits in [{MIN_BITS}, {MAX_BITS}])"
            )));
        }
        if !(self.eval.rbw_hz > 0.0 && self.eval.papr_step_db > 0.0 && self.eval.papr_max_db > 0.0)
        {
            return Err(CliError::Usage(
                "eval resolution settings must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The output root: the environment override, then `output_dir`, then `runs`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs")),
        }
    }
}
