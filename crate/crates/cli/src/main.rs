//! `deepadc`: generate captures, train the post-processor, evaluate it, and sweep fixed-point widths.

mod commands;
mod config;
mod error;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{capture_name, EVAL_PREFIX, TRAIN_PREFIX};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "deepadc",
    version,
    about = "Time-interleaved ADC simulation and neural error compensation"
)]
#[command(after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const AFTER_HELP: &str =
    "Default paths live under the output root: $DEEPADC_OUTPUT_ROOT, else `output_dir` \
from the config, else ./runs.\nExit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.";

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate analog records and ADC captures for the training and evaluation splits.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Dataset directory [default: <root>/dataset].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the post-processor on a dataset's training captures.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Model file [default: <root>/model.dam].
        #[arg(long, value_name = "PATH")]
        model_out: Option<PathBuf>,
        /// Continue training from the model already at --model-out.
        #[arg(long)]
        resume: bool,
    },
    /// Score ideal, non-ideal, shift-corrected and network-corrected streams.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Capture files or dataset directories (their evaluation captures) [default: <root>/dataset].
        #[arg(long, value_name = "PATH")]
        capture: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Quantise the model at several bit widths and score each on one capture.
    QuantSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Capture to score [default: the dataset's evaluation capture of `quant.constellation`].
        #[arg(long, value_name = "PATH")]
        capture: Option<PathBuf>,
        /// Capture supplying calibration windows [default: the matching training capture].
        #[arg(long, value_name = "PATH")]
        calibration: Option<PathBuf>,
        /// Sweep CSV [default: <root>/quant_sweep.csv].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let load = |c: &Common| RunConfig::load(c.config.as_deref());
    match cli.command {
        Command::Gen { common, out } => {
            let cfg = load(&common)?;
            let out = out.unwrap_or_else(|| cfg.output_root().join("dataset"));
            commands::cmd_gen(&cfg, &out)
        }
        Command::Train {
            common,
            dataset,
            model_out,
            resume,
        } => {
            let cfg = load(&common)?;
            let root = cfg.output_root();
            let dataset = dataset.unwrap_or_else(|| root.join("dataset"));
            let model_out = model_out.unwrap_or_else(|| root.join("model.dam"));
            commands::cmd_train(&cfg, &dataset, &model_out, resume)
        }
        Command::Eval {
            common,
            model,
            capture,
            out,
        } => {
            let cfg = load(&common)?;
            let root = cfg.output_root();
            let model = model.unwrap_or_else(|| root.join("model.dam"));
            let captures = if capture.is_empty() {
                vec![root.join("dataset")]
            } else {
                capture
            };
            let out = out.unwrap_or_else(|| root.join("eval"));
            commands::cmd_eval(&cfg, &model, &captures, &out)
        }
        Command::QuantSweep {
            common,
            model,
            capture,
            calibration,
            out,
        } => {
            let cfg = load(&common)?;
            let root = cfg.output_root();
            let model = model.unwrap_or_else(|| root.join("model.dam"));
            let order = cfg.quant.constellation;
            let capture = capture
                .unwrap_or_else(|| root.join("dataset").join(capture_name(EVAL_PREFIX, order)));
            let calibration = calibration
                .unwrap_or_else(|| root.join("dataset").join(capture_name(TRAIN_PREFIX, order)));
            let out = out.unwrap_or_else(|| root.join("quant_sweep.csv"));
            commands::cmd_quant_sweep(&cfg, &model, &capture, &calibration, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
