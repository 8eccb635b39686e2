//! `tal`: calibration, stream simulation, training and benchmarking for the
//! temporal-adjusted loss.

mod commands;
mod error;
mod output;
mod plotdata;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{BenchArgs, StreamArgs, TheoremArgs};
use crate::error::{CliError, CliResult};

const AFTER_HELP: &str = "\
Output directory: --output-dir, else the spec's output_dir, else $TAL_OUTPUT_DIR, else ./tal-output.

Exit codes:
  0  success
  2  usage error (bad flags or arguments)
  3  configuration error (unreadable or invalid spec)
  4  library error (precondition or numerical failure)
  5  I/O error
  6  verification failed

Errors are also reported on stderr as one JSON line:
  {\"error\":\"<kind>\",\"code\":<exit code>,\"message\":\"...\"}";

#[derive(Debug, Parser)]
#[command(name = "tal", version, about = "Temporal-adjusted loss toolkit", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the steady state x* and the scale α.
    Calibrate {
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        /// Use the bracketed Newton solver even where a closed form exists.
        #[arg(long)]
        numeric: bool,
    },
    /// Generate a class-incremental label stream with its S-curves and Q trajectory.
    SimulateStream {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 20)]
        replay: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.995)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check the equal-count ordering on random front-/back-loaded pairs.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 256)]
        length: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.99])]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Train on synthetic incremental tasks for every seed in a spec.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Sweep λ × r against the cross-entropy baseline.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Time both losses per batch over a grid of batch sizes and class counts.
    BenchLoss {
        #[arg(long, value_delimiter = ',', default_values_t = tal_core::bench::BATCH_SIZES)]
        batches: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = tal_core::bench::CLASS_COUNTS)]
        classes: Vec<usize>,
        /// Logit entries processed per trial and cell.
        #[arg(long, default_value_t = 2_000_000)]
        work: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Reshape a train output directory into a long-format table.
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Calibrate { classes, exponent, numeric } => commands::calibrate(classes, exponent, numeric),
        Command::SimulateStream { classes, tasks, per_class, replay, seed, lambda, exponent, batch_size, output_dir } => {
            let args = StreamArgs { classes, tasks, per_class, replay, seed, lambda, exponent, batch_size };
            commands::simulate_stream(&args, output_dir)
        }
        Command::VerifyTheorem1 { pairs, length, lambdas, seed, output_dir } => {
            commands::verify_theorem1(&TheoremArgs { pairs, length, lambdas, seed }, output_dir)
        }
        Command::Train { spec, output_dir } => commands::train(&spec, output_dir),
        Command::Ablate { spec, output_dir } => commands::run_ablation(&spec, output_dir),
        Command::BenchLoss { batches, classes, work, trials, seed, output_dir } => {
            commands::bench_loss(&BenchArgs { batches, classes, work, trials, seed }, output_dir)
        }
        Command::Plotdata { input, output_dir } => plotdata::plotdata(&input, output_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            let _ = e.print();
            eprintln!("{}", err.record());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code())
        }
    }
}
