//! Driver for the emulator: `run`, `sweep` and `profile` commands, each of
//! which writes a JSON report and prints a short table.

pub mod args;
mod commands;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{
    cmd_profile, cmd_run, cmd_sweep, monotone_samples, report_path, REPORT_DIR_ENV,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{path}`: {msg}")]
    Read { path: String, msg: String },
    #[error("cannot write `{path}`: {msg}")]
    Write { path: String, msg: String },
    #[error("`{path}`: {source}")]
    Parse {
        path: String,
        source: carmen_core::Error,
    },
    #[error(transparent)]
    Core(#[from] carmen_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Parse `argv`, dispatch, and return the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let written = match &cli.command {
        args::Command::Run(a) => cmd_run(a).map(|r| r.1),
        args::Command::Sweep(a) => cmd_sweep(a).map(|r| r.1),
        args::Command::Profile(a) => cmd_profile(a).map(|r| r.1),
    };
    match written {
        Ok(path) => {
            eprintln!("report written to {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("carmen: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `carmen help` for usage");
            }
            e.exit_code()
        }
    }
}
