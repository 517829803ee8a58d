//! The `medvlm` command line: one binary wiring training, benchmark
//! construction, evaluation, scoring and report metrics together. Every
//! run writes a manifest of its inputs and outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid flags or
//! configuration, 3 overlap found by `check-overlap`.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod toy_bench;

use args::{Cli, Command};

/// Run a parsed command line and return the exit code.
pub fn dispatch(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::BuildBench(a) => commands::build_bench(a),
        Command::Eval(a) => commands::eval(a),
        Command::Score(a) => commands::score_cmd(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::CheckOverlap(a) => commands::check_overlap_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            error::exit_code(&e)
        }
    }
}
