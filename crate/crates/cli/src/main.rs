//! Batch command-line surface over the blip3-forge library. One command per
//! invocation; every run prints a JSON report with the resolved config, its
//! digest, counts, timings, and invariant verdicts.
//!
//! Exit codes: 0 success, 1 run failure or failed invariant (report still
//! emitted), 2 usage or config error. `BLIP3_FORGE_THREADS` caps the worker
//! pool commands may use internally.

mod cmd;
mod config;
mod errors;
mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::cmd::CommonArgs;
use crate::errors::{CliError, CliResult};
use crate::report::RunReport;

#[derive(Debug, Parser)]
#[command(
    name = "blip3-forge",
    version,
    about = "Deterministic data-curation and training pipelines for an interleaved vision-language stack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the patch tiling plan for one image.
    Plan(cmd::plan::PlanArgs),
    /// Encode an image and compress it to latent vision tokens.
    Resample(cmd::resample::ResampleArgs),
    /// Tokenize an interleaved corpus and pack it into training shards.
    Pack(cmd::pack::PackArgs),
    /// Interleave dataset sources at exact weighted ratios.
    Mix(cmd::mix::MixArgs),
    /// Emit OCR captions at one of the six granularity levels.
    Ocr(cmd::ocr::OcrArgs),
    /// Ground caption objects in one of the three localization formats.
    Ground(cmd::ground::GroundArgs),
    /// Build preference pairs from scored response sets.
    Pairs(cmd::pairs::PairsArgs),
    /// Evaluate the preference loss on logprob rows; optionally noise an image.
    Dpo(cmd::dpo::DpoArgs),
    /// Train the resampler and decoder on a corpus with the stub frozen.
    Train(cmd::train::TrainArgs),
    /// Derived reports: loss curves, adapter plans, safety mixtures.
    #[command(subcommand)]
    Report(cmd::report_cmd::ReportCmd),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Plan(_) => "plan",
            Command::Resample(_) => "resample",
            Command::Pack(_) => "pack",
            Command::Mix(_) => "mix",
            Command::Ocr(_) => "ocr",
            Command::Ground(_) => "ground",
            Command::Pairs(_) => "pairs",
            Command::Dpo(_) => "dpo",
            Command::Train(_) => "train",
            Command::Report(_) => "report",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Plan(a) => &a.common,
            Command::Resample(a) => &a.common,
            Command::Pack(a) => &a.common,
            Command::Mix(a) => &a.common,
            Command::Ocr(a) => &a.common,
            Command::Ground(a) => &a.common,
            Command::Pairs(a) => &a.common,
            Command::Dpo(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Report(r) => r.common(),
        }
    }

    fn run(&self) -> CliResult<RunReport> {
        match self {
            Command::Plan(a) => cmd::plan::run(a),
            Command::Resample(a) => cmd::resample::run(a),
            Command::Pack(a) => cmd::pack::run(a),
            Command::Mix(a) => cmd::mix::run(a),
            Command::Ocr(a) => cmd::ocr::run(a),
            Command::Ground(a) => cmd::ground::run(a),
            Command::Pairs(a) => cmd::pairs::run(a),
            Command::Dpo(a) => cmd::dpo::run(a),
            Command::Train(a) => cmd::train::run(a),
            Command::Report(r) => r.run(),
        }
    }
}

/// Applies the BLIP3_FORGE_THREADS cap to the global worker pool before any
/// parallel work starts.
fn init_thread_cap() -> CliResult<()> {
    let Ok(raw) = std::env::var("BLIP3_FORGE_THREADS") else {
        return Ok(());
    };
    let threads = raw
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "BLIP3_FORGE_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Run(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let report_to: Option<PathBuf> = cli.command.common().report.clone();

    if let Err(e) = init_thread_cap() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }

    match cli.command.run() {
        Ok(rep) => {
            if let Err(e) = rep.emit(report_to.as_deref()) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            if rep.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: invariant check failed, see report");
                ExitCode::from(1)
            }
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            // Failed runs still leave a machine-readable trace.
            let _ = RunReport::failure(name, &msg).emit(report_to.as_deref());
            ExitCode::from(1)
        }
    }
}
