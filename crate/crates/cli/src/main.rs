//! `csiloc`: synthesize data, extract features, train, evaluate, bench.
//!
//! Exit codes: 0 success, 2 usage, 3 data or shape, 4 training divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<csiloc::Error> for CliError {
    fn from(e: csiloc::Error) -> Self {
        use csiloc::Error as E;
        let code = match e {
            E::Argument(_) | E::Geometry(_) => 2,
            E::Divergence { .. } => 4,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "csiloc",
    version,
    about = "CSI fingerprint positioning pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines, or a provenance.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set dnn.lr=5e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (synth) or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "snr-db")]
        snr_db: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Preprocess, split and extract features.
    Prep {
        #[arg(long)]
        data: Option<PathBuf>,
        /// smoothed-csi or cm
        #[arg(long)]
        feature: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one method on a prep directory.
    Train {
        /// Directory written by `prep`.
        #[arg(long)]
        features: Option<PathBuf>,
        /// dnn, rnn, rf or xgb
        #[arg(long)]
        method: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model on a feature file.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature file, e.g. `<prep dir>/test.csif`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the feature × method × size grid and print a results table.
    Bench {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(common: &Common, named: &[(&str, Option<String>)]) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    let fixed = [
        ("seed", common.seed.map(|s| s.to_string())),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in named.iter().chain(&fixed) {
        if let Some(v) = v {
            cfg.set(k, v.clone());
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match cli.command {
        Command::Synth { n, snr_db, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("n", n.map(|v| v.to_string())),
                    ("snr_db", snr_db.map(|v| v.to_string())),
                ],
            )?;
            commands::synth(cfg)
        }
        Command::Prep {
            data,
            feature,
            common,
        } => {
            let cfg = build_config(&common, &[("data", path_str(&data)), ("feature", feature)])?;
            commands::prep(cfg)
        }
        Command::Train {
            features,
            method,
            common,
        } => {
            let cfg = build_config(
                &common,
                &[("features", path_str(&features)), ("method", method)],
            )?;
            commands::train(cfg)
        }
        Command::Eval {
            model,
            features,
            common,
        } => {
            let cfg = build_config(
                &common,
                &[
                    ("model", path_str(&model)),
                    ("features", path_str(&features)),
                ],
            )?;
            commands::eval(cfg)
        }
        Command::Bench { data, common } => {
            let cfg = build_config(&common, &[("data", path_str(&data))])?;
            commands::bench(cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
