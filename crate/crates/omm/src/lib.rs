//! Command-line driver and local HTTP service for the opinion market model.
//!
//! Each subcommand reads datasets and model files produced by `omm-core`,
//! writes checksummed JSON reports plus plot-ready CSV tables, and records
//! the resolved configuration and seed in every report.

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod service;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use omm_core::error::ErrorClass;
use omm_core::OmmError;

pub use cli::Cli;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

pub fn exit_code(error: &OmmError) -> i32 {
    match error.class() {
        ErrorClass::Input => exit::USAGE,
        ErrorClass::Data => exit::DATA,
        ErrorClass::Numerical => exit::NUMERICAL,
    }
}

/// Resolves the config and runs the command; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, OmmError> {
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    let record = config::resolve(&cli.global, &cli.command).map_err(|e| e.in_stage("config"))?;
    commands::execute(&cli.global, &cli.command, &record).map_err(|e| e.in_stage(cli.command.name()))
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            exit::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
