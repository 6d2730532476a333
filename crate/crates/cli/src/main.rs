//! `attnfilter`: filtered attention-rollout explanations and saliency
//! metric reports from the command line.

mod bench;
mod evaluate;
mod explain;
mod export;
mod inputs;
mod overlay;
mod pool;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnfilter_core::explain::{ClassSelector, K_SWEEP};
use attnfilter_core::oracle::OracleSpec;
use attnfilter_core::{par, Error, Method};

/// Environment variable that takes precedence over `--oracle`.
pub const ORACLE_ENV: &str = "ATTNFILTER_ORACLE";

#[derive(Parser, Debug)]
#[command(name = "attnfilter", version, about = "Filtered attention-rollout explanations for Vision Transformers")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Worker threads for image-level parallelism; 0 uses every core
    #[arg(short, long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Model oracle, "cmd:<argv>" or "tcp:<host>:<port>" (ATTNFILTER_ORACLE wins when set)
    #[arg(long, global = true)]
    oracle: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write saliency maps for attention bundles
    Explain(ExplainArgs),
    /// Filtered rollout maps over a grid of K values
    SweepK(SweepArgs),
    /// Score saliency maps against gaze maps and a model oracle
    Evaluate(evaluate::EvaluateArgs),
    /// Export attention bundles for images through a model oracle
    Export(export::ExportArgs),
    /// Per-image runtime of each explanation method
    Bench(bench::BenchArgs),
    /// Serve a seeded synthetic model over the oracle protocol
    #[command(hide = true)]
    SyntheticOracle(serve::ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MapOutput {
    /// Output directory for `<image_id>.<method>.npy`
    #[arg(long)]
    pub out: PathBuf,

    /// Also write a heatmap overlay PNG next to every map
    #[arg(long)]
    pub png: bool,

    /// Directory of `<image_id>.npy` inputs used as overlay background
    #[arg(long, requires = "png")]
    pub images: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Bundle directories, or directories containing bundle directories
    #[arg(long, required = true, num_args = 1..)]
    pub bundles: Vec<PathBuf>,

    /// Methods to run, comma separated
    #[arg(long, value_delimiter = ',', default_value = "rfem")]
    pub method: Vec<Method>,

    /// Filter strength K; a comma-separated list writes one map per value
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1.0")]
    pub k: Vec<f64>,

    /// Target class index or "predicted" for the argmax of the bundle logits
    #[arg(long, default_value = "predicted")]
    pub class: ClassSelector,

    /// Seed of the random baseline
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Clamp negative attention-gradient products in rfem-class
    #[arg(long)]
    pub clamp: bool,

    #[command(flatten)]
    pub output: MapOutput,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub bundles: Vec<PathBuf>,

    /// K values, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = K_SWEEP.to_vec())]
    pub k: Vec<f64>,

    /// Sweep the class-specific variant for this class ("predicted" or an index)
    #[arg(long)]
    pub class: Option<ClassSelector>,

    #[command(flatten)]
    pub output: MapOutput,
}

/// A command-level failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

/// Number of items that failed while the command as a whole completed.
pub type Outcome = Result<usize, Failure>;

/// The effective oracle: the environment variable first, then the flag.
pub fn oracle_spec(flag: Option<&str>) -> Result<Option<OracleSpec>, Failure> {
    let env = std::env::var(ORACLE_ENV).ok().filter(|s| !s.trim().is_empty());
    if let (Some(e), Some(f)) = (&env, flag) {
        if e != f {
            log::info!("{ORACLE_ENV}={e} overrides --oracle {f}");
        }
    }
    env.as_deref()
        .or(flag)
        .map(|s| s.parse::<OracleSpec>().map_err(Failure::from))
        .transpose()
}

fn run(cli: Cli) -> Outcome {
    let oracle = cli.oracle.as_deref();
    match cli.command {
        Command::Explain(a) => explain::run(&a),
        Command::SweepK(a) => explain::sweep(&a),
        Command::Evaluate(a) => evaluate::run(&a, oracle_spec(oracle)?),
        Command::Export(a) => export::run(&a, oracle_spec(oracle)?),
        Command::Bench(a) => bench::run(&a),
        Command::SyntheticOracle(a) => serve::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let threads = if cli.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cli.jobs
    };
    match par::with_threads(threads, move || run(cli)) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("attnfilter: {n} item(s) failed");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("attnfilter: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
