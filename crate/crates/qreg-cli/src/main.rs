//! `qreg` — registration experiments from the command line: run a method on
//! a cloud pair, score an estimate against ground truth, generate synthetic
//! benchmark scenes, or sweep a whole benchmark matrix.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 when estimation declines
//! the input (every patch pair degenerate, or all candidates gated away).
//! Thread count is controlled by the RAYON_NUM_THREADS environment variable;
//! results are bit-identical across thread counts.

mod bench;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "qreg", version, about = "Point cloud registration from quadric patch frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the rigid transform aligning a source cloud onto a target
    Register(commands::RegisterArgs),
    /// Score an estimated transform against ground truth, printing CSV
    Evaluate(commands::EvaluateArgs),
    /// Generate a synthetic scene with known ground truth
    Synth(commands::SynthArgs),
    /// Sweep a benchmark matrix and write per-cell statistics as CSV
    Bench(bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // help and version are successful outcomes; everything else is
            // a parse failure and lands on the exit-1 path like other bad
            // input
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    let result = match &cli.command {
        Command::Register(args) => commands::cmd_register(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Bench(args) => bench::cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
