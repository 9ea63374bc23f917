use std::process::ExitCode;

use clap::Parser;
use focusrl::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("focusrl: {e}");
            ExitCode::FAILURE
        }
    }
}
