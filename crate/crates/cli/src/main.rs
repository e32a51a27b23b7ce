//! `sphereswim`: drag checks, mobility, simulation, controllability certificates and optimal
//! strokes from JSON configuration files.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sphereswim", version, about = "Low-Reynolds-number sphere swimmers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Existing directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Quadrature points per sphere (a Fibonacci number).
    #[arg(long, global = true)]
    pub nq: Option<usize>,
    /// Exit with status 2 when a tolerance or convergence check fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Seed for the jitter of the optimizer's initial guess.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate the configuration and stop.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-sphere drag against 6πηa over a quadrature ladder.
    Drag,
    /// Mobility, resistance and dissipation metric at one state.
    Mobility {
        /// Also write the quadrature grid and collocation matrix.
        #[arg(long)]
        dump_bem: bool,
    },
    /// Integrate a prescribed stroke.
    Simulate,
    /// Lie brackets and the rank test at one state.
    Brackets,
    /// Energy-optimal stroke.
    Optimize,
    /// Optimal energy against the start angle of the planar swimmer.
    BranchScan,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Tolerance(String),
    Physical(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Tolerance(_) | CliError::Numerical(_) => 2,
            CliError::Physical(_) => 3,
            CliError::Usage(_) => 64,
            CliError::Io(_) => 66,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Tolerance(m) | CliError::Physical(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<sphereswim::Error> for CliError {
    fn from(e: sphereswim::Error) -> Self {
        use sphereswim::Error as E;
        let msg = e.to_string();
        match e {
            _ if e.is_physical() => CliError::Physical(msg),
            E::InvalidInput(_) | E::Json(_) => CliError::Usage(msg),
            E::Io(_) => CliError::Io(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 64 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
