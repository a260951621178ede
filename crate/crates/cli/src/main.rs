mod commands;
mod mtx;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchrows::SketchError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Unreadable or malformed files.
    Input(String),
    Sketch(SketchError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Sketch(e) => write!(f, "{e}"),
        }
    }
}

impl From<SketchError> for CliError {
    fn from(e: SketchError) -> Self {
        CliError::Sketch(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Sketch(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "sketchrows", version, about = "Row sampling sketches that preserve l2 and lp norms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Norm {
    L2,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LeverageMode {
    Exact,
    Approx,
}

#[derive(Subcommand)]
enum Command {
    /// Exact or estimated leverage scores as `row,score` CSV.
    Leverage(LeverageArgs),
    /// Row-sample a matrix so that its l2 or lp norms are preserved.
    Sample(SampleArgs),
    /// Check that B approximates A; exits 1 when it does not.
    Verify(VerifyArgs),
    /// Least squares through an l2 row sample of [A b].
    Lstsq(LstsqArgs),
    /// Row counts, timings and verification on synthetic designs.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct LeverageArgs {
    /// Matrix Market input.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: LeverageMode,
    /// Overestimation factor of the approximate mode (at least e^2).
    #[arg(long, default_value_t = 8.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Approximate mode: also compute exact scores and fail unless 99% of rows are upper bounded.
    #[arg(long)]
    pub self_test: bool,
    /// Write the JSON report here (stderr when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: Norm,
    /// Norm exponent; required with `--norm lp`.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Block reduction rate R of the l2 ladder (at least 8).
    #[arg(long)]
    pub reduction_rate: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Matrix Market output for the sampled matrix.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV `out_row,src_row,scale` (0-based rows).
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    /// Also verify the sample against the input and include the result.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value_t = 1000)]
    pub directions: usize,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: Norm,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Number of test directions for `--norm lp`.
    #[arg(long, default_value_t = 1000)]
    pub directions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct LstsqArgs {
    pub a: PathBuf,
    /// Right-hand side, one value per line.
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Solution output, one value per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the exact reference solve above this many rows.
    #[arg(long, default_value_t = 1_000_000)]
    pub exact_max_rows: usize,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: Norm,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub directions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[cfg(feature = "parallel")]
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SKETCHROWS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SKETCHROWS_THREADS must be a positive integer, got '{raw}'")))?;
    // Fails only if a pool already exists, in which case it is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> Result<(), CliError> {
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = configure_threads().and_then(|()| match cli.command {
        Command::Leverage(a) => commands::leverage(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Lstsq(a) => commands::lstsq(&a),
        Command::Bench(a) => commands::bench(&a),
    });
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
