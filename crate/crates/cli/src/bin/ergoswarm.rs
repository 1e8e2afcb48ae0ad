use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ergoswarm_cli::main_with(ergoswarm_cli::Cli::parse())
}
