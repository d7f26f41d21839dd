use std::process::ExitCode;

use clap::Parser;
use hdrfuse_cli::{exit_code, init_workers, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_workers().and_then(|()| cli.run()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
