//! `sfmp` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 verification failure,
//! 4 I/O or file-format error.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Verify(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Verify(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Verify(m) => write!(f, "verification failed: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<sfmp_core::Error> for CliError {
    fn from(e: sfmp_core::Error) -> Self {
        match e {
            sfmp_core::Error::Shape(_) | sfmp_core::Error::InvalidArgument(_) => Self::Config(e.to_string()),
            sfmp_core::Error::Format(_) | sfmp_core::Error::Io(_) => Self::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Quantize(a) => commands::quantize(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::GenFixture(a) => commands::gen_fixture(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfmp: {e}");
            ExitCode::from(e.code())
        }
    }
}
