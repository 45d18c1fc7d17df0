//! Command-line front end for `ddlab-core`.
//!
//! Every subcommand reads one TOML run configuration, applies `--set`
//! overrides, validates it and writes JSON/CSV artifacts into the output
//! directory together with the effective configuration.
//!
//! Exit codes: `0` success (including unconverged results, which are marked in
//! the artifacts), `1` hard failure, `2` unreadable or malformed config,
//! `3` semantic violation, `4` unmet hypotheses.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ddlab_core::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SEMANTIC: i32 = 3;
pub const EXIT_HYPOTHESES: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(EXIT_PARSE, message)
    }

    pub fn semantic(field: &str, reason: impl fmt::Display) -> Self {
        Self::new(EXIT_SEMANTIC, format!("invalid {field}: {reason}"))
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self::new(EXIT_FAILURE, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidSpec { .. }
            | Error::InvalidInverter(_)
            | Error::InvalidInterval { .. }
            | Error::IncompatibleInputs(_)
            | Error::ResourceLimit(_) => EXIT_SEMANTIC,
            Error::HypothesesNotVerified(_) => EXIT_HYPOTHESES,
            Error::NoFeasibleSchedule { .. } | Error::ConditioningFailure(_) | Error::QuadratureNonConvergence(_) => {
                EXIT_FAILURE
            }
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::failure(format!("i/o error: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddlab", version, about = "Decoupling control of a finite-level atom in a truncated bosonic bath")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Static checks: config invariants, constants, decoupling residual and the weak-coupling condition.
    Validate(Common),
    /// Weighted deviation of coupled and uncoupled propagators at every `dynamics.t`.
    Simulate(Common),
    /// Build the control schedule and report its decoupling residual and action.
    Design(Common),
    /// Measured deviation against the explicit bound at every `dynamics.t`.
    Verify(Common),
    /// Sweep `experiment.axis` over `experiment.grid` and fit a log-log slope.
    Sweep(Common),
    /// Operator identities, norm bounds and propagator diagnostics.
    Propcheck(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Override a config entry, e.g. `--set dynamics.g=2e-3`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; takes precedence over `DDLAB_OUTPUT_DIR` and `output.dir`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// What a successful run reports back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

type Handler = fn(&RunConfig, &commands::Context) -> Result<Outcome, CliError>;

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let (common, f): (&Common, Handler) = match &cli.command {
        Command::Validate(c) => (c, commands::validate),
        Command::Simulate(c) => (c, commands::simulate),
        Command::Design(c) => (c, commands::design),
        Command::Verify(c) => (c, commands::verify),
        Command::Sweep(c) => (c, commands::sweep),
        Command::Propcheck(c) => (c, commands::propcheck),
    };
    let cfg = RunConfig::load(&common.config, &common.overrides)?;
    let ctx = commands::Context::new(&cfg, common.out.as_deref(), !matches!(cli.command, Command::Validate(_)));
    f(&cfg, &ctx)
}
