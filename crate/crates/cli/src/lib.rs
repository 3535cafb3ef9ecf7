//! Command-line driver: training runs, condition suites, figure exports and sweeps.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, EXIT_CONFIG};

/// Environment variable overriding the worker-pool size.
pub const THREADS_ENV: &str = "GROKXOR_THREADS";

fn pool_size(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = pool_size(cli.threads).and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            builder = builder.num_threads(t.max(1));
        }
        let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
        pool.install(|| match &cli.command {
            Command::Run(a) => commands::cmd_run(a),
            Command::Check(a) => commands::cmd_check(a),
            Command::Figures(a) => commands::cmd_figures(a),
            Command::Sweep(a) => commands::cmd_sweep(a),
            Command::DumpConfig(a) => commands::cmd_dump_config(a),
        })
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("grokxor: {e}");
            e.code()
        }
    }
}
