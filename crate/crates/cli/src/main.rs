//! `fovlab`: synthesize datasets, attack them, run estimators, train and
//! evaluate the segmentation network, and benchmark the whole path.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fovlab::{config::ExperimentConfig, Error};

#[derive(Parser)]
#[command(name = "fovlab", version, about = "LiDAR field-of-view estimation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every command accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON); unknown keys are rejected. Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config's `seed`, `train.seed` and `mcd.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Do not print the resolved config to stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Synth(SynthArgs),
    /// Write a spoofed copy of a dataset; masks are copied unchanged.
    Attack(AttackArgs),
    /// Run a classical estimator over a dataset split and score it.
    Estimate(EstimateArgs),
    /// Train the segmentation network on a dataset.
    Train(TrainArgs),
    /// Estimate the field of view of a single cloud with a checkpoint.
    Infer(InferArgs),
    /// Fit the anomaly detector on benign frames.
    Calibrate(CalibrateArgs),
    /// Evaluate checkpoints on test sets (transfer matrix).
    Eval(EvalArgs),
    /// Precision and AUPRC as uniform spoofing grows.
    Sweep(SweepArgs),
    /// Replay a dataset at full speed and report frame rates.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory; falls back to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Scene family preset (outdoor-sparse, outdoor-dense, indoor).
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AttackKindArg {
    Uniform,
    Cluster,
}

#[derive(Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// AttackSpec JSON file; otherwise the config's attack or a uniform default.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<AttackKindArg>,
    /// Spoofed points per frame.
    #[arg(long)]
    pub points: Option<usize>,
    /// Half-width of the uniform support square, meters.
    #[arg(long)]
    pub bounds: Option<f64>,
    /// Cluster centre `x,y`, meters.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub center: Option<Vec<f64>>,
    /// Cluster spread, meters.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Rayq,
    Rayc,
    Concave,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Azimuth bins for rayq.
    #[arg(long, default_value_t = fovlab::classical::DEFAULT_BINS)]
    pub bins: usize,
    /// Neighbour count for concave.
    #[arg(long, default_value_t = fovlab::classical::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Apply the config's defense (or the default one) before estimating.
    #[arg(long)]
    pub defend: bool,
    /// Directory for predicted masks and metrics.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint path; the epoch log goes next to it as `.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Fraction of training and validation frames spoofed with the config's
    /// attack (uniform over the grid by default).
    #[arg(long, default_value_t = 0.0)]
    pub spoof_fraction: f64,
    /// Pick base width, dropout and learning rate by k-fold cross-validation first.
    #[arg(long)]
    pub crossval: Option<usize>,
    /// Restrict the cross-validation grid to these base widths.
    #[arg(long, value_delimiter = ',')]
    pub cv_base: Option<Vec<usize>>,
}

#[derive(Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary cloud (`.fvpc`), or a CSV with `--pose`.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Pose sidecar for a CSV cloud.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Monte Carlo dropout passes; 0 runs a single deterministic pass.
    #[arg(long, default_value_t = 0)]
    pub mcd: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Anomaly model from `calibrate`; requires `--mcd`.
    #[arg(long)]
    pub anomaly: Option<PathBuf>,
    /// Output mask (PGM).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Benign dataset; its validation split is used.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// `TRAIN_SET[:VARIANT]=checkpoint`, repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// `NAME=dataset_dir`, repeatable; the test split is used.
    #[arg(long = "test", required = true)]
    pub tests: Vec<String>,
    /// Directory for metrics.jsonl, metrics.csv and metrics.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub passes: Option<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Needed for the mle and mcd estimators.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "rayq,rayc,concave")]
    pub estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,25,50,75,100,125,150")]
    pub counts: Vec<usize>,
    /// Uniform support half-width; defaults to the grid extent.
    #[arg(long)]
    pub bounds: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMethod {
    Rayq,
    Rayc,
    Concave,
    Mle,
    Mcd,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "rayq")]
    pub method: BenchMethod,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Grid resolution for classical methods; defaults to the dataset's.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = fovlab::classical::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
}

impl Common {
    /// Config file (or defaults) with the seed override applied.
    pub fn resolve(&self) -> fovlab::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    pub fn announce(&self, cfg: &ExperimentConfig) {
        if !self.quiet {
            eprintln!("{}", cfg.to_json());
        }
    }
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::BudgetExceeded { .. } => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FOVLAB_THREADS") else { return Ok(()) };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or(format!("FOVLAB_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Attack(a) => commands::attack(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
