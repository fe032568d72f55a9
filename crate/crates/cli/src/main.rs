mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use coagdrift_core::Error as CoreError;

/// Exit codes: 0 success, 2 usage or domain error, 3 non-convergence or
/// scheme failure, 4 uncertified output.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const UNCERTIFIED: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Core(
                CoreError::InnerNonConvergence { .. }
                | CoreError::OuterNonConvergence { .. }
                | CoreError::NumericalConsistency { .. }
                | CoreError::SchemeFailure { .. }
                | CoreError::StepSize { .. }
                | CoreError::DivergentNormalization(_),
            ) => exit::NUMERICAL,
            _ => exit::USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coagdrift", version, about = "Self-similar profiles for coagulation with nonlocal drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the admissible threshold m0_bar(v) and, for --m0, the barrier constant tau_star.
    Threshold {
        #[arg(long)]
        v: f64,
        #[arg(long)]
        m0: Option<f64>,
    },
    /// Solve for the fat-tail profile and write CSV + JSON metadata.
    Solve(SolveArgs),
    /// Recompute residual, moments, F(0) and the tail fit from a profile file.
    Verify {
        profile: PathBuf,
        /// Metadata sidecar; defaults to the profile path with a .json extension.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Evolve the time-dependent model from a stored profile.
    Simulate(SimulateArgs),
    /// Solve a list of m0 values in parallel.
    Sweep {
        #[command(flatten)]
        common: SolverArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        m0: Vec<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the closed-form exponential profile (m0 = 1 - v) in the profile file format.
    Exponential {
        #[arg(long)]
        v: f64,
        #[arg(long, default_value_t = 400.0)]
        zmax: f64,
        #[arg(long, default_value_t = 2049)]
        nodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub v: f64,
    #[arg(long, default_value_t = 1e6)]
    pub zmax: f64,
    #[arg(long, default_value_t = 2049)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol_inner: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_outer: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 500)]
    pub max_inner: usize,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    /// Bound on the weighted residual norm required for certification.
    #[arg(long, default_value_t = 1e-6)]
    pub cert_tol: f64,
    /// Solve even when m0 exceeds m0_bar; such output is exploratory.
    #[arg(long)]
    pub force: bool,
    /// Also write a gnuplot script next to each CSV.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: SolverArgs,
    #[arg(long)]
    pub m0: f64,
    /// Profile CSV; defaults to profile_v<v>_m0<m0>.csv in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metadata JSON; defaults to the CSV path with a .json extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
    #[arg(long)]
    pub t1: f64,
    #[arg(long, default_value_t = 4096)]
    pub cells: usize,
    /// Domain cutoff; by default the smallest one holding 99.9% of M1 at t1.
    #[arg(long)]
    pub xmax: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub cfl: f64,
    /// Snapshot times (comma separated); t1 is always included.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<f64>,
    /// Number of evenly spaced diagnostic rows between t0 and t1.
    #[arg(long, default_value_t = 20)]
    pub diagnostics: usize,
    /// Right end of the comparison window in the similarity variable.
    #[arg(long, default_value_t = 10.0)]
    pub z_cmp: f64,
    /// Use the FFT pair-sum instead of the direct O(M^2) sum.
    #[arg(long)]
    pub fft: bool,
    /// Treat a domain holding less than 99.9% of M1 as an error.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Threshold { v, m0 } => commands::threshold(v, m0),
        Command::Solve(args) => commands::solve(&args),
        Command::Verify { profile, meta } => commands::verify(&profile, meta.as_deref()),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Sweep { common, m0, out_dir } => commands::sweep(&common, &m0, out_dir.as_deref()),
        Command::Exponential { v, zmax, nodes, out, gnuplot } => {
            commands::exponential(v, zmax, nodes, out.as_deref(), gnuplot)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
