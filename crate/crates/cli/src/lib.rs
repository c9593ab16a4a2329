//! Command-line front end: TOML run manifests, CSV ingestion and result
//! files for the `rkhs-spectest` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod run;

use clap::{Parser, Subcommand};

pub use config::{Command, Format, Overrides, RunConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "rkhs-spectest", version, about = "Specification tests for additive RKHS models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit the model on a data file
    Fit(Overrides),
    /// Test a restricted model against its alternative on a data file
    Test(Overrides),
    /// Monte Carlo rejection frequencies for a simulation design
    Simulate(Overrides),
}

impl Cmd {
    pub fn split(&self) -> (Command, &Overrides) {
        match self {
            Cmd::Fit(o) => (Command::Fit, o),
            Cmd::Test(o) => (Command::Test, o),
            Cmd::Simulate(o) => (Command::Simulate, o),
        }
    }
}

/// What a successful invocation prints: the result body for stdout and, when
/// no output file was given, the resolved config for stderr.
pub struct Printed {
    pub stdout: String,
    pub stderr: Option<String>,
}

pub fn run_cli(cli: &Cli) -> Result<Printed> {
    let (command, overrides) = cli.command.split();
    let config = RunConfig::load(command, overrides)?;
    if overrides.echo_config {
        return Ok(Printed { stdout: config.to_toml_string()?, stderr: None });
    }
    if let Some(t) = config.threads {
        // fails only if a pool already exists, in which case that pool is used
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let outcome = run::execute(&config)?;
    let body = run::render(&outcome, config.output.format);
    match run::emit(&config, &body)? {
        Some(echoed) => Ok(Printed { stdout: body, stderr: Some(echoed) }),
        None => Ok(Printed { stdout: String::new(), stderr: None }),
    }
}
