//! `occbound`: synthesize, train, predict, thin, adjust and evaluate
//! occlusion boundaries.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
//! 3 a requested check failed.

mod args;
mod commands;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] occbound::Error),
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use occbound::Error as E;
        match self {
            CliError::Core(E::Io { .. } | E::Format { .. }) => 2,
            CliError::Core(_) | CliError::Usage(_) => 1,
            CliError::CheckFailed(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
