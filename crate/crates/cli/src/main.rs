//! `panelcast`: ingest, synthesize, train, evaluate and ablate from the shell.
//!
//! Exit codes: 0 success, 1 any other failure, 2 bad input files or usage,
//! 3 invalid configuration, 4 training diverged, 5 checkpoint/config digest mismatch.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use panelcast_core::Error;

use config::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "panelcast", version, about = "Store×item sales forecasting harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read the six Favorita CSVs and cache a dense panel cube.
    Ingest {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config; only its `[split]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic panel cube.
    Synth {
        /// Synthetic-panel TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the panel as Favorita-style CSVs into this directory.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Train one or more seeded runs and report their test metrics.
    Train {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum, default_value = "seq2seq-trimmed")]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; run r uses seed + r. Defaults to the config's `[train] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Disable the random max time step: every batch uses the latest training anchor.
        #[arg(long)]
        no_trick: bool,
        #[arg(long, default_value = "runs/train")]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on the test periods.
    Evaluate {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Model config; defaults to the `<checkpoint>.config.toml` sidecar.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Run config; its `[eval]` and `[split]` sections are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        period: PeriodArg,
        /// Add the random and average baselines.
        #[arg(long)]
        baselines: bool,
        #[arg(long, default_value = "runs/evaluate")]
        out_dir: PathBuf,
    },
    /// Sweep a configuration axis over repeated runs with significance tests.
    Ablate {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum)]
        sweep: Sweep,
        #[arg(long, value_enum, default_value = "seq2seq-trimmed")]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Add the random and average baselines to results.csv.
        #[arg(long)]
        baselines: bool,
        #[arg(long, default_value = "runs/ablate")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PeriodArg {
    #[value(name = "1")]
    P1,
    #[value(name = "2")]
    P2,
    #[value(name = "3")]
    P3,
    All,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    /// Random max time step on (reference) and off.
    Trick,
    /// History of full (reference), 200, 75, 10, 1 and 0 days.
    Length,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Header { .. } | Error::Malformed { .. } | Error::Format(_) => 2,
                Error::Config(_) => 3,
                Error::Divergence { .. } => 4,
                Error::DigestMismatch { .. } => 5,
                _ => 1,
            };
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes a message already embeds.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match cli.command {
        Command::Ingest { data_dir, out, config } => commands::ingest(&data_dir, &out, config.as_deref(), args),
        Command::Synth { config, out, csv_dir } => commands::synth(config.as_deref(), &out, csv_dir.as_deref(), args),
        Command::Train {
            cube,
            model,
            config,
            seed,
            runs,
            no_trick,
            out_dir,
        } => commands::train(
            &commands::TrainArgs {
                cube,
                model,
                config,
                seed,
                runs,
                no_trick,
                out_dir,
            },
            args,
        ),
        Command::Evaluate {
            cube,
            checkpoint,
            model_config,
            config,
            period,
            baselines,
            out_dir,
        } => commands::evaluate(
            &commands::EvaluateArgs {
                cube,
                checkpoint,
                model_config,
                config,
                period,
                baselines,
                out_dir,
            },
            args,
        ),
        Command::Ablate {
            cube,
            sweep,
            model,
            config,
            seed,
            runs,
            baselines,
            out_dir,
        } => commands::ablate(
            &commands::AblateArgs {
                cube,
                sweep,
                model,
                config,
                seed,
                runs,
                baselines,
                out_dir,
            },
            args,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
