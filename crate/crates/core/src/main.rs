use std::process::ExitCode;

use clap::Parser;
use micloc::cli::{run, Cli};
use micloc::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse { .. } | Error::Version { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
