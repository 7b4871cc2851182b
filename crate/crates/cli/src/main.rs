//! `sparse-observer`: design, exhaustive, simulate and sweep subcommands.
//!
//! Exit codes: 0 success, 1 invalid arguments or solver failure, 2 infeasible
//! (certificate written), 3 I/O or model error (nothing written), 4 a design
//! failed its norm certificate.

mod commands;
mod config;
mod output;

use clap::Parser;
use config::{Cli, Command, RunConfig};
use sparse_observer::analysis::AnalysisError;
use sparse_observer::design::DesignError;
use sparse_observer::model::ModelError;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Model(_) | CliError::Analysis(AnalysisError::Io(_)) => 3,
            CliError::Design(DesignError::Model(_)) => 3,
            _ => 1,
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let (cfg, result) = match &cli.command {
        Command::Design(args) => {
            let cfg = RunConfig::from_args(&args.common)?;
            let r = commands::cmd_design(&cfg, args.penalty)?;
            (cfg, r)
        }
        Command::Exhaustive(args) => {
            let cfg = RunConfig::from_args(args)?;
            let r = commands::cmd_exhaustive(&cfg)?;
            (cfg, r)
        }
        Command::Simulate(args) => {
            let cfg = RunConfig::from_args(&args.common)?;
            let r = commands::cmd_simulate(&cfg, args)?;
            (cfg, r)
        }
        Command::Sweep(args) => {
            let cfg = RunConfig::from_args(&args.common)?;
            let support = match &args.support {
                Some(names) => cfg.resolve_sensors(names)?,
                None => (0..cfg.plant.n_y()).collect(),
            };
            let r = commands::cmd_sweep(&cfg, &args.penalty, &support)?;
            (cfg, r)
        }
    };
    let (files, outcome) = result;
    for path in files.commit(&cfg.out)? {
        println!("{}", path.display());
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
