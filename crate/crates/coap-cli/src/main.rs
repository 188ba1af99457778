//! `coap` — fit, simulate, select, and evaluate covariate-augmented
//! overdispersed Poisson factor models from the command line.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 numerical failure.

mod commands;
mod io;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "coap", version, about = "Covariate-augmented Poisson factor model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Simulate(SimulateArgs),
    /// Fit the factor model by variational EM
    Fit(FitArgs),
    /// Select the number of factors and the coefficient rank by the
    /// singular value ratio method
    Select(SelectArgs),
    /// Evaluate fitted estimates against ground truth
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of samples
    #[arg(long)]
    n: usize,
    /// Number of count variables
    #[arg(long)]
    p: usize,
    /// Number of covariates (including the intercept column)
    #[arg(long, default_value_t = 50)]
    d: usize,
    /// True number of latent factors
    #[arg(long, default_value_t = 5)]
    q0: usize,
    /// True coefficient rank
    #[arg(long, default_value_t = 6)]
    r0: usize,
    /// Covariate signal strength
    #[arg(long = "rho-z", default_value_t = 6.0)]
    rho_z: f64,
    /// Loading signal strength
    #[arg(long = "rho-b", default_value_t = 3.0)]
    rho_b: f64,
    /// Error variance of the latent log-rates
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Offsets: a positive constant, or 'rowsum' for sequencing-depth
    /// offsets derived from the sampled counts
    #[arg(long, default_value = "1")]
    offset: String,
    /// RNG seed (also selects the replicate)
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by `fit` and `select`.
#[derive(Args)]
struct FitCommonArgs {
    /// Count matrix (CSV, or MatrixMarket coordinate file)
    #[arg(long)]
    x: PathBuf,
    /// Covariate matrix (CSV)
    #[arg(long)]
    z: PathBuf,
    /// Offset vector (CSV, one value per sample); defaults to all ones
    #[arg(long)]
    a: Option<PathBuf>,
    /// Maximum number of EM iterations
    #[arg(long = "max-iter", default_value_t = 50)]
    max_iter: usize,
    /// Relative ELBO-change stopping tolerance (0 disables early stopping)
    #[arg(long = "eps-elbo", default_value_t = 1e-5)]
    eps_elbo: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: FitCommonArgs,
    /// Number of latent factors
    #[arg(long)]
    q: usize,
    /// Coefficient rank
    #[arg(long)]
    r: usize,
    /// Update the coefficients and error variances jointly instead of
    /// with the separate (coordinate) update
    #[arg(long = "joint-beta", default_value_t = false)]
    joint_beta: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: FitCommonArgs,
    /// Upper bound on the number of factors
    #[arg(long = "q-max", default_value_t = coap::rank::DEFAULT_Q_MAX)]
    q_max: usize,
    /// Upper bound on the coefficient rank
    #[arg(long = "r-max", default_value_t = coap::rank::DEFAULT_R_MAX)]
    r_max: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Fit output directory (repeat once per replicate)
    #[arg(long = "fit-dir", required = true)]
    fit_dirs: Vec<PathBuf>,
    /// Ground-truth directory, paired with --fit-dir by position
    #[arg(long = "truth-dir", required = true)]
    truth_dirs: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Errors surfaced to the user, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: unusable files, malformed flags, shape mismatches (exit 2).
    Usage(String),
    /// The computation itself failed (exit 3).
    Numerical(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<coap::CoapError> for CliError {
    fn from(err: coap::CoapError) -> Self {
        use coap::CoapError::*;
        match &err {
            NonIntegerCount { .. }
            | NonPositiveOffset { .. }
            | RankDeficientCovariates { .. }
            | RankTooLarge { .. }
            | FactorCountTooLarge { .. }
            | DimensionMismatch { .. }
            | EmptyMatrix
            | InvalidSpec { .. } => CliError::Usage(err.to_string()),
            _ => CliError::Numerical(err.to_string()),
        }
    }
}

/// Environment variable controlling the compute thread count.
const THREADS_ENV: &str = "COAP_NUM_THREADS";

fn configure_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .parse()
            .ok()
            .filter(|t| *t > 0)
            .ok_or_else(|| {
                CliError::usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(format!("failed to configure thread pool: {e}")))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Select(args) => commands::select(&args),
        Command::Eval(args) => commands::eval(&args),
    });
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            std::process::exit(3);
        }
    }
}
