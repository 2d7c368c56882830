use std::process::ExitCode;

use clap::Parser;
use qstrat::cli_reporting::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
