use std::process::ExitCode;

use clap::Parser;
use medvlm_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    ExitCode::from(medvlm_cli::dispatch(&cli))
}
