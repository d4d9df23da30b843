//! Command-line surface. Every subcommand's arguments serialize into the run
//! manifest, so a manifest alone is enough to replay the run.

mod check;
mod commands;
mod info;
pub mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynaprune::scoring::DeltaKind;
use dynaprune::toytrain::{Arch, LrSchedule, TrainConfig, Weighting};
use dynaprune::trajlog::{FileFormat, Method, RecordingMode};
use serde::{Deserialize, Serialize};

pub use commands::run_command;

#[derive(Debug, Parser)]
#[command(
    name = "dynaprune",
    version,
    about = "Score, prune and retrain from training trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset
    GenData(GenDataArgs),
    /// Train on a dataset and record the probability trajectory
    Train(TrainArgs),
    /// Score every sample of a trajectory log
    Score(ScoreArgs),
    /// Keep the top-scoring fraction of a score table
    Select(SelectArgs),
    /// Retrain from scratch on a coreset
    Retrain(RetrainArgs),
    /// Run the built-in numerical self-checks
    Check(CheckArgs),
    /// Run the prune-and-retrain comparison grid
    Compare(CompareArgs),
    /// Describe any file this tool writes
    Info(InfoArgs),
    /// Re-run the command recorded in a manifest
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainOpts {
    /// Training epochs
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// linear or mlp
    #[arg(long, default_value = "linear")]
    pub arch: String,
    /// Hidden width for --arch mlp
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// constant or cosine
    #[arg(long, default_value = "constant")]
    pub schedule: LrSchedule,
    /// train-time or eval-time
    #[arg(long, default_value = "train-time")]
    pub recording: RecordingMode,
    #[arg(long)]
    pub no_shuffle: bool,
}

impl TrainOpts {
    pub fn config(&self, seed: u64, weighting: Weighting) -> anyhow::Result<TrainConfig> {
        let arch = match self.arch.to_ascii_lowercase().as_str() {
            "linear" => Arch::Linear,
            "mlp" => Arch::Mlp { hidden: self.hidden },
            other => anyhow::bail!("unknown architecture {other:?} (expected linear or mlp)"),
        };
        let cfg = TrainConfig {
            arch,
            eta: self.eta,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            shuffle: !self.no_shuffle,
            lr_schedule: self.schedule,
            weighting,
            recording: self.recording,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub output: PathBuf,
    /// Also write a held-out test set here
    #[arg(long)]
    pub test_output: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 250)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Distance between any two class centers
    #[arg(long, default_value_t = 2.5)]
    pub center_distance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Fraction of N appended as jittered copies
    #[arg(long, default_value_t = 0.0)]
    pub duplicates: f64,
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    /// Fraction of N relabeled to a wrong class
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bin")]
    pub format: FileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset file
    #[arg(long)]
    pub input: PathBuf,
    /// Trajectory log to write
    #[arg(long)]
    pub output: PathBuf,
    /// Also save the final model checkpoint here
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoringOpts {
    /// Leading epochs of the log to score (default: all)
    #[arg(long)]
    pub epochs_t: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub window_k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    /// kl or ce
    #[arg(long, default_value = "kl")]
    pub delta: DeltaKind,
    /// Keep delta signs instead of magnitudes
    #[arg(long)]
    pub signed: bool,
    #[arg(long, default_value_t = 10)]
    pub el2n_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub dynunc_window: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    /// Trajectory log
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "tdds")]
    pub method: Method,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    /// Seed for the random baseline
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bin")]
    pub format: FileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    /// Score table
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Pruning rate in (0, 1)
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value = "bin")]
    pub format: FileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RetrainArgs {
    /// Dataset the coreset indexes into
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub coreset: PathBuf,
    /// Model checkpoint to write
    #[arg(long)]
    pub output: PathBuf,
    /// Evaluate on this dataset after training
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// none, raw or mean-one
    #[arg(long, default_value = "mean-one")]
    pub weighting: Weighting,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    /// Random instances per check
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Training dataset
    #[arg(long)]
    pub input: PathBuf,
    /// Test dataset
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
    /// Comma-separated methods
    #[arg(long = "method", value_delimiter = ',', default_value = "tdds,random")]
    pub methods: Vec<Method>,
    /// Comma-separated pruning rates
    #[arg(long = "rate", value_delimiter = ',', default_value = "0.5,0.7,0.9")]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Parallel cells (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Weighting for TDDS retraining; baselines always retrain unweighted
    #[arg(long, default_value = "mean-one")]
    pub weighting: Weighting,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value = "bin")]
    pub format: FileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InfoArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
