use std::process::ExitCode;

use clap::Parser;
use mrhs_cli::{Cli, CliError};

fn main() -> ExitCode {
    let args: Vec<_> = std::env::args_os().collect();
    // help and version go straight to stdout with success
    if let Err(e) = Cli::try_parse_from(&args) {
        e.print().ok();
        return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
    }
    let mut stdout = std::io::stdout().lock();
    match mrhs_cli::run(args, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Breakdown(_) = e {
                eprintln!("partial report written");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
