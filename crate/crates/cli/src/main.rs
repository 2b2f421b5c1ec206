//! `ned` drives the pipeline: certify, spectrum, lyapunov, linearize,
//! verify, or the whole thing in one go.
//!
//! Exit codes: 0 ok, 2 parse/usage error, 3 not certifiable, 4 violated
//! linearization precondition, 1 anything else. stdout carries one summary
//! line per run; diagnostics go to stderr.

mod commands;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ned", version, about = "Nonuniform contraction certificates, dichotomy spectra, and linearizing homeomorphisms for nonautonomous ODE systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit contraction, growth and coefficient certificates.
    Certify(CertifyArgs),
    /// Scan shifts for dichotomy verdicts and merge spectrum intervals.
    Spectrum(SpectrumArgs),
    /// Build a Lyapunov evaluator and verify its axioms.
    Lyapunov(LyapunovArgs),
    /// Map points through a linearizing homeomorphism.
    Linearize(LinearizeArgs),
    /// Run the verification suite for a linearization method.
    Verify(VerifyArgs),
    /// certify -> spectrum -> lyapunov -> linearize -> verify, shared state.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Crossing,
    Picard,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VKind {
    Strict,
    Quadratic,
}

#[derive(Args)]
pub struct CommonArgs {
    /// System JSON: {"dim": n, "A": [[expr, ...], ...], "params": {...}}.
    #[arg(long)]
    pub system: PathBuf,
    /// Optional kinematic transform JSON; applied to the system (and
    /// perturbation) before anything else.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Certification window.
    #[arg(long, default_value_t = 20.0)]
    pub t_max: f64,
    /// Sample-grid density for fits.
    #[arg(long, default_value_t = 33)]
    pub samples: usize,
    /// Nonuniformity cap for certificate fits; defaults to requiring
    /// mu <= alpha per candidate.
    #[arg(long)]
    pub mu_cap: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_max: f64,
    #[arg(long)]
    pub step: f64,
}

#[derive(Args)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Evaluator construction.
    #[arg(long, value_enum, default_value_t = VKind::Strict)]
    pub method: VKind,
    /// Decay weight; defaults to half the certified rate.
    #[arg(long)]
    pub alpha_v: Option<f64>,
    /// Truncation tolerance of the construction.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Axiom-check sample count.
    #[arg(long, default_value_t = 1000)]
    pub check_samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Perturbation JSON: {"f": [...], "L_f": r, "beta": r, "K0": r,
    /// "class": "A1"|"A2"}.
    #[arg(long)]
    pub perturbation: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Input points CSV (rows: tau, xi_1..xi_n). Generated from --seed when
    /// absent.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub n_points: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Fixed-point / root-finding tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Level of the crossing construction.
    #[arg(long, default_value_t = 1.0)]
    pub level: f64,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub linearize: LinearizeArgs,
}

#[derive(Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub linearize: LinearizeArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub step: f64,
}

#[derive(Debug)]
pub enum CliError {
    /// Input files that do not exist or do not parse (exit 2).
    Parse(String),
    /// Grid or flag combinations that make no sense (exit 2).
    Usage(String),
    /// No certificate on this window (exit 3).
    NotCertifiable(String),
    /// A linearization precondition failed, e.g. the contraction ratio
    /// (exit 4).
    Precondition(String),
    /// Everything else (exit 1).
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Usage(_) => 2,
            CliError::NotCertifiable(_) => 3,
            CliError::Precondition(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Parse(m)
            | CliError::Usage(m)
            | CliError::NotCertifiable(m)
            | CliError::Precondition(m)
            | CliError::Other(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Certify(args) => commands::certify(&args),
        Cmd::Spectrum(args) => commands::spectrum(&args),
        Cmd::Lyapunov(args) => commands::lyapunov(&args),
        Cmd::Linearize(args) => commands::linearize(&args),
        Cmd::Verify(args) => commands::verify(&args),
        Cmd::Pipeline(args) => commands::pipeline(&args),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ned: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
