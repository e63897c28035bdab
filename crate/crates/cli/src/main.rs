//! `edsh`: batch pipeline for discrete supervised cross-modal hashing.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime or numerical failure,
//! 3 unreadable or malformed files.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "edsh",
    version,
    about = "Discrete supervised cross-modal hashing pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality clustered dataset.
    Synth(SynthArgs),
    /// Split a dataset into train and query parts.
    Split(SplitArgs),
    /// Convert a CSV file (one sample per row) into an EDSHMAT1 matrix.
    ImportCsv(ImportCsvArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Hash a feature matrix with a trained model.
    Encode(EncodeArgs),
    /// Rank database codes by Hamming distance for every query code.
    Retrieve(RetrieveArgs),
    /// Compute mAP@M, top-k precision and PR curves for a rankings file.
    Eval(EvalArgs),
    /// Time training at several dataset sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub d1: usize,
    #[arg(long)]
    pub d2: usize,
    /// Standard deviation of the per-coordinate Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of samples assigned to the query part.
    #[arg(long, default_value_t = 0.25)]
    pub query_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub query_out: PathBuf,
}

#[derive(Args)]
pub struct ImportCsvArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the CSV layout instead of transposing to one sample per column.
    #[arg(long)]
    pub as_is: bool,
    /// The first CSV line is a header.
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Clone)]
pub struct HyperArgs {
    /// Code length in bits.
    #[arg(long, default_value_t = 16)]
    pub bits: usize,
    #[arg(long, default_value_t = 20)]
    pub miter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta1: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta2: f64,
    #[arg(long, default_value_t = 5.0)]
    pub mu: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (x1/x2/labels .edshmat).
    #[arg(long)]
    pub data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report path; defaults to `<out>/train_report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// EDSHMAT1 feature matrix, one sample per column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub modality: u8,
    #[arg(long)]
    pub out: PathBuf,
    /// Hash with `sign(W x)` instead of `sign(R W x)`.
    #[arg(long)]
    pub no_rotation: bool,
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    /// Number of hits per query, or `all`.
    #[arg(long, default_value = "all", value_parser = parse_top_m)]
    pub top_m: TopM,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for ranking queries.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum TopM {
    All,
    Count(usize),
}

fn parse_top_m(s: &str) -> Result<TopM, String> {
    if s == "all" {
        return Ok(TopM::All);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("top-m must be >= 1".into()),
        Ok(n) => Ok(TopM::Count(n)),
        Err(_) => Err(format!("expected a positive count or `all`, got {s:?}")),
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long)]
    pub query_labels: PathBuf,
    #[arg(long)]
    pub db_labels: PathBuf,
    /// mAP cutoff M.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    /// Top-k precision cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 50, 100, 200, 500, 1000])]
    pub ks: Vec<usize>,
    /// AP normalizer: `min` = min(relevant, M), `all` = all relevant.
    #[arg(long, default_value = "min", value_parser = ["min", "all"])]
    pub normalizer: String,
    /// Output directory for metrics.json, topk.csv and pr.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Training set sizes, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [2000usize, 4000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub d1: usize,
    #[arg(long, default_value_t = 32)]
    pub d2: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Training runs per size; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::ImportCsv(a) => commands::import_csv(a),
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
