//! `droso`: synthesise traversals, train voting DrosoNet ensembles, evaluate
//! them with PR curves, measure latency and sweep hyperparameters.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use droso_core::drosonet::DEFAULT_ACTIVATIONS;
use droso_core::voting::{DEFAULT_MODELS, DEFAULT_RADIUS_FRACTION};

#[derive(Debug, Parser)]
#[command(name = "droso", version, about = "Compact visual place recognition with voting DrosoNets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic reference traversal and a perturbed query traversal as PGM files.
    Synth(SynthArgs),
    /// Train, quantize and save an ensemble from a reference directory.
    Train(TrainArgs),
    /// Match a query directory against a saved ensemble and report PR/AUC.
    Evaluate(EvaluateArgs),
    /// Measure single-threaded voting latency of a saved ensemble.
    Benchmark(BenchmarkArgs),
    /// Train and evaluate over a grid of model counts and activation counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; frames go to `reference/` and `query/` inside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    places: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the query perturbations (defaults to --seed).
    #[arg(long)]
    query_seed: Option<u64>,
    /// Noise standard deviation as a fraction of full scale.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Brightness offset as a fraction of full scale.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    brightness: f64,
    /// Circular horizontal shift of the queries in pixels.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    shift: i32,
}

#[derive(Debug, Clone, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = DEFAULT_RADIUS_FRACTION)]
    radius_frac: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Master seed; member seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    ref_dir: PathBuf,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MODELS)]
    models: usize,
    #[arg(long, default_value_t = DEFAULT_ACTIVATIONS)]
    activations: usize,
    /// Keep float32 weights instead of quantizing to int8.
    #[arg(long)]
    no_quantize: bool,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    query_dir: PathBuf,
    /// Inclusive frame tolerance for a match to count as correct.
    #[arg(long, default_value_t = 1)]
    tolerance: usize,
    /// Override the radius stored in the model, as a fraction of the place count.
    #[arg(long)]
    radius_frac: Option<f64>,
    /// CSV `query,reference` for traversals that are not index-aligned.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    pr_out: Option<PathBuf>,
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    model: PathBuf,
    /// Benchmark on the first frame of this directory instead of a mid-gray frame.
    #[arg(long)]
    query_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    ref_dir: PathBuf,
    #[arg(long)]
    query_dir: PathBuf,
    /// Comma-separated model counts.
    #[arg(long, value_delimiter = ',', default_value = "1,8,16,32,64")]
    models: Vec<usize>,
    /// Comma-separated activation counts.
    #[arg(long, value_delimiter = ',', default_value = "64,128,192,256")]
    activations: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    tolerance: usize,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<droso_core::Error> for Failure {
    fn from(e: droso_core::Error) -> Self {
        use droso_core::Error as E;
        match e {
            E::InvalidParameter(_) => Failure::Usage(e.to_string()),
            E::ZeroWeights => Failure::Internal(e.to_string()),
            E::TooFewPlaces(n) => Failure::Data(format!("need ≥ 2 places, found {n}")),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DROSO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("DROSO_THREADS={raw} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Sweep(a) => commands::sweep(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
