//! Command-line front end wiring the whole toolkit: simulation, dataset
//! generation, detector training, detection, LLM explanation, evaluation,
//! shot sweeps, and plotting.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{DetectorKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "agc-fdia",
    version,
    about = "Two-area AGC simulation, measurement-attack datasets, tree-ensemble detection, \
             and LLM explanation harness",
    propagate_version = true
)]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its recorded trace (JSON, plus SVG/CSV).
    Simulate(SimulateArgs),
    /// Generate the balanced labeled dataset.
    Gen(GenArgs),
    /// Split the dataset, train a detector, and report held-out metrics.
    Train(TrainArgs),
    /// Score a dataset (or one sample) with a saved model.
    Detect(DetectArgs),
    /// Produce explanation reports for alarmed holdout samples.
    Explain(ExplainArgs),
    /// Score saved explanation reports and render the report files.
    Evaluate(EvaluateArgs),
    /// Run the shot-count sweep end to end and render the report files.
    Sweep(SweepArgs),
    /// Render a sample's signals against its attack-free twin.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace output path (JSON).
    #[arg(long, default_value = "trace.json")]
    out: PathBuf,
    /// Also render the trace as an SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also emit the plotted series as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Noise stream seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disturbed area (1 or 2).
    #[arg(long, default_value_t = 1)]
    disturbance_area: u8,
    /// Load step magnitude (pu).
    #[arg(long, default_value_t = 0.02)]
    disturbance_magnitude: f64,
    /// Load step start time (s).
    #[arg(long, default_value_t = 5.0)]
    disturbance_start: f64,
    /// Simulation window (s); must stay a multiple of the 0.3 s grid.
    #[arg(long, default_value_t = 60.0)]
    window: f64,
    /// Bypass deadband, rate limit, and delay.
    #[arg(long)]
    linear: bool,
    /// Override the AGC integral gain of both areas.
    #[arg(long)]
    ki: Option<f64>,
    /// Disable process and measurement noise.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Number of samples (even; half normal, half attacked).
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Master seed; the file content depends only on (n, seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; any count produces identical bytes.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Where to save the trained model.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Learner to fit.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_seed: Option<u64>,
    /// Run a seeded random hyperparameter search with this many trials.
    #[arg(long, default_value_t = 0)]
    tune_trials: usize,
    #[arg(long)]
    tune_seed: Option<u64>,
    /// Optional JSON file for the held-out metrics.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Gbdt,
    RandomForest,
}

impl From<KindArg> for DetectorKind {
    fn from(kind: KindArg) -> Self {
        match kind {
            KindArg::Gbdt => DetectorKind::Gbdt,
            KindArg::RandomForest => DetectorKind::RandomForest,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Score only this sample id.
    #[arg(long)]
    sample: Option<u64>,
    /// Write per-sample results as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum BackendArg {
    /// Deterministic oracle that answers with the ground truth.
    MockEcho,
    /// Echo wrapped in prose/fences with a seeded fraction of garbage.
    MockFault,
    /// OpenAI-compatible endpoint; needs AGC_LLM_API_KEY.
    Live,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendArg::MockEcho)]
    backend: BackendArg,
    /// Few-shot example count.
    #[arg(long, default_value_t = 20)]
    shots: usize,
    /// Explain at most this many holdout samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Output path for the explanation outcomes (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    shots_seed: Option<u64>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model_name: Option<String>,
    #[arg(long)]
    fault_rate: Option<f64>,
    #[arg(long)]
    fault_seed: Option<u64>,
    /// Append every Nth recorded point to each query (off by default).
    #[arg(long, value_name = "N")]
    series_stride: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Explanation outcomes produced by `explain`.
    #[arg(long)]
    reports: PathBuf,
    /// Directory for report.md / report.csv.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Optional detector metrics JSON (from `train --metrics-out`) to fill
    /// the detection table.
    #[arg(long)]
    classifier_metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendArg::MockEcho)]
    backend: BackendArg,
    /// Comma-separated shot counts, e.g. 0,5,10,20.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    shots_seed: Option<u64>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model_name: Option<String>,
    #[arg(long)]
    fault_rate: Option<f64>,
    #[arg(long)]
    fault_seed: Option<u64>,
    /// Append every Nth recorded point to each query (off by default).
    #[arg(long, value_name = "N")]
    series_stride: Option<usize>,
    #[arg(long)]
    classifier_metrics: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sample id to plot.
    #[arg(long)]
    sample: u64,
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
    /// Also emit the plotted series as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(&config, args),
        Command::Gen(args) => commands::generate(&config, args),
        Command::Train(args) => commands::train(&config, args),
        Command::Detect(args) => commands::detect(&config, args),
        Command::Explain(args) => commands::explain(&config, args),
        Command::Evaluate(args) => commands::evaluate(&config, args),
        Command::Sweep(args) => commands::sweep(&config, args),
        Command::Plot(args) => commands::plot(&config, args),
    }
}
