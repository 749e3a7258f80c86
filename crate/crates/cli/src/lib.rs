//! Command-line driver: reads a run config, dispatches one command, writes
//! JSON/CSV artifacts and maps failures onto exit codes.
//!
//! Exit codes: 0 success, 2 rejected config or failed validation, 1 numeric
//! or I/O failure (including gain divergence under `--strict`).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Validation(_) => 2,
            Failure::Numeric(_) | Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Validation(m) => write!(f, "validation failed: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
            Failure::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<ensemble_place::Error> for Failure {
    fn from(e: ensemble_place::Error) -> Self {
        use ensemble_place::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::LengthMismatch { .. }
            | E::TruncationTooShort { .. }
            | E::DuplicatePole { .. }
            | E::StepSize { .. }
            | E::NotMirrorRegime(_)
            | E::MissingCertificate => Failure::Validation(e.to_string()),
            E::PoleProximity { .. }
            | E::NonFinite { .. }
            | E::Diverged { .. }
            | E::ConditionGuard(_)
            | E::WindingSnap { .. }
            | E::NotNormalizable(_) => Failure::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ensemble-place", version, about = "Pole placement for infinite diagonal ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set truncation.N=32`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; replaces `output.directory`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Treat gain divergence as a failure (exit 1).
    #[arg(long)]
    pub strict: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    /// Products over the N modes only (finite Ackermann gain).
    Finite,
    /// Products truncated at M.
    Infinite,
    /// `-a_n pi_n / b_n` with pi truncated at M.
    Mirror,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetChoice {
    Config,
    Mirror,
    Zero,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the necessary conditions on the materialized ensemble.
    Validate(Common),
    /// Evaluate the zeta threshold series at d.
    Zeta {
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Evaluate the xi series at d.
    Xi {
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Compute the feedback gain.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SynthMode::Infinite)]
        mode: SynthMode,
        #[arg(long, value_enum, default_value_t = TargetChoice::Config)]
        targets: TargetChoice,
    },
    /// Decay-class, ratio, Phi-decay and pi-bound checks.
    Feasibility(Common),
    /// Eigenvector residuals, winding numbers, Cauchy involution.
    Verify(Common),
    /// Integrate the closed loop and classify stability.
    Simulate(Common),
    /// Summarize the artifacts in a directory.
    Report {
        /// Artifact directory.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Take the directory from this config instead.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

pub fn run_cli(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate(c) => commands::validate(&c),
        Command::Zeta { d, tol } => commands::series("zeta", d, tol),
        Command::Xi { d, tol } => commands::series("xi", d, tol),
        Command::Synth { common, mode, targets } => commands::synth(&common, mode, targets),
        Command::Feasibility(c) => commands::feasibility(&c),
        Command::Verify(c) => commands::verify(&c),
        Command::Simulate(c) => commands::simulate(&c),
        Command::Report { dir, config } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => config::RunConfig::load(&c, &[])?.output.directory,
                (None, None) => return Err(Failure::Usage("report needs --dir or --config".into())),
            };
            report::report(&dir).map(|_| ())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
