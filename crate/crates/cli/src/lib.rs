//! The `loretta-lab` command line: data generation, pre-training, evaluation,
//! probing, membership testing, sampling and the cycle diagnostic.

pub mod checkpoint;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::Cli;

/// A mistake in how the command was invoked.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Bad or inconsistent input files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    use loretta_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Input(_) => EXIT_USAGE,
                E::Numerical { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                EXIT_OK
            } else {
                let _ = write!(stderr, "{}", e.render());
                EXIT_USAGE
            };
        }
    };
    match commands::dispatch(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            exit_code(&e)
        }
    }
}
