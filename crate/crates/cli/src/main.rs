//! `tdabench` — generate benchmark bundles, run evaluation grids over
//! explainer configurations, and emit machine-readable reports.

mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdabench_core::Error;

#[derive(Parser)]
#[command(
    name = "tdabench",
    about = "Training-data attribution benchmarks: generate, evaluate, attribute",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark bundle from a JSON config.
    Generate {
        /// Path to a generation config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory the bundle is written to.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate explainers against bundles and write report files.
    Evaluate {
        /// Bundle directories, in addition to any listed in the run config.
        #[arg(long)]
        bundle: Vec<PathBuf>,
        /// Run configuration (JSON): explainers, repeats, formats.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for report.json / scores.csv / curves.json.
        #[arg(long)]
        out: PathBuf,
        /// Base offset applied to every explainer seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the attribution matrix an evaluation of this bundle would use.
    Attribute {
        #[arg(long)]
        bundle: PathBuf,
        /// Explainer configuration (JSON).
        #[arg(long)]
        explainer: PathBuf,
        /// Output file for the serialized attribution matrix.
        #[arg(long)]
        out: PathBuf,
        /// Offset applied to the explainer's seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Exit codes: 0 success, 2 configuration error, 3 incompatibility,
/// 4 numeric failure, 5 I/O or integrity failure.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::ShapeMismatch { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Capacity { .. } => 2,
        Error::Incompatible(_) => 3,
        Error::Numeric(_) | Error::Diverged { .. } | Error::Metric(_) => 4,
        Error::Io(_) | Error::Serde(_) | Error::Integrity(_) | Error::UnsupportedSchema { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate { config, out, seed } => run::generate(&config, &out, seed),
        Command::Evaluate {
            bundle,
            config,
            out,
            seed,
        } => run::evaluate(&bundle, &config, &out, seed),
        Command::Attribute {
            bundle,
            explainer,
            out,
            seed,
        } => run::attribute(&bundle, &explainer, &out, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
