use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cdcl_cli::commands;
use cdcl_core::Error;

#[derive(Parser)]
#[command(name = "cdcl", version, about = "Contextual discriminative contrastive anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train.csv/test.csv pair
    Generate {
        /// Generator spec file (`key = value`); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the spec seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write model.ckpt + report.txt
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a series with a trained checkpoint
    Score {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Scores CSV to write
        #[arg(long, default_value = "scores.csv")]
        out: PathBuf,
    },
    /// Evaluate a scores CSV against labeled data
    Evaluate {
        scores: PathBuf,
        data: PathBuf,
        /// Apply point adjustment before precision/recall
        #[arg(long)]
        adjust: bool,
        /// Directory for eval.txt and sweep.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train several modes on the same data and compare them
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated mode list; defaults to all five
        #[arg(long)]
        modes: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        adjust: bool,
    },
    /// Check analytic gradients against finite differences for every loss
    Gradcheck {
        /// First seed of the sweep
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> cdcl_core::Result<u8> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            commands::cmd_generate(config.as_deref(), &out, seed)?;
        }
        Command::Train { config, seed, out } => {
            commands::cmd_train(&config, seed, out.as_deref())?;
        }
        Command::Score { checkpoint, data, out } => {
            commands::cmd_score(&checkpoint, &data, &out)?;
        }
        Command::Evaluate { scores, data, adjust, out } => {
            commands::cmd_evaluate(&scores, &data, adjust, &out)?;
        }
        Command::Ablate { config, modes, seed, adjust } => {
            commands::cmd_ablate(&config, modes.as_deref(), seed, adjust)?;
        }
        Command::Gradcheck { seed } => {
            if !commands::cmd_gradcheck(seed)? {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

/// 1 for bad inputs or configuration, 2 for aborts inside a computation.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument { .. }
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::DegenerateLabels { .. }
        | Error::ShapeMismatch { .. } => 1,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => 2,
    }
}
