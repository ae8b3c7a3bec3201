//! Command-line driver for the `memometer` library.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! The manifest holds the resolved configuration, the global seed and the
//! fingerprints of every dataset read, so `memometer rerun <manifest>`
//! reproduces the numeric outputs byte for byte.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
mod commands;
mod context;
mod io;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::Parser;

pub use args::Cli;
pub use context::Context;

/// A failed command, classified by exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Bad arguments or configuration. Exit code 2.
    Config(String),
    /// Missing, unreadable or malformed input, or an unreachable score bridge. Exit code 3.
    Data(String),
    /// The integration or a statistic broke down. Exit code 4.
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<memometer::Error> for Failure {
    fn from(e: memometer::Error) -> Self {
        use memometer::Error as E;
        let msg = e.to_string();
        match e {
            E::Domain(_) | E::Unsupported(_) => Failure::Config(msg),
            E::Format(_) | E::Io { .. } | E::Bridge(_) => Failure::Data(msg),
            E::Integration { .. } | E::Degenerate(_) => Failure::Numerical(msg),
        }
    }
}

/// Caps the rayon pool at `MEMOMETER_THREADS` when set.
fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("MEMOMETER_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Config(format!("MEMOMETER_THREADS must be a positive integer, got {value:?}")))?;
    if n == 0 {
        return Err(Failure::Config("MEMOMETER_THREADS must be at least 1".into()));
    }
    // A pool that already exists (a second call in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (program name first) and runs the selected command.
pub fn run<I, T>(argv: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Failure::Config(e.to_string().trim_end().to_string())),
    };
    init_threads()?;
    let recorded: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    commands::dispatch(cli, recorded)
}

/// `run` over the process arguments, with failures reported on stderr.
pub fn main_entry() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("memometer: {f}");
            ExitCode::from(f.code())
        }
    }
}
