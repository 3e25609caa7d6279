//! Command-line front end: JSON config, CSV ingestion, synthetic data and
//! report files around `fairpol-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use clap::Parser;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};

/// Parses `args` (program name first), runs the verb and returns the exit
/// code: 0 on success, 1 for config or validation failures, 2 for I/O.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
