use std::process::ExitCode;

use bhc_cli::{execute, logging, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init();
    match execute(&cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("bhc {}: {e:#}", cli.command.name());
            ExitCode::from(1)
        }
    }
}
