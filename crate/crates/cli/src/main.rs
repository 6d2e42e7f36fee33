use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match adaptest_cli::run(adaptest_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
