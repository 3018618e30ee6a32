//! Command-line front end for the `actdet` detector.
//!
//! Every command returns an [`actdet::Error`]; [`exit_code`] maps it onto the
//! process exit status (2 configuration, 3 data or format, 4 numeric failure).

mod bench;
mod config;
mod eval;
mod infer;
mod synth;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use bench::{BenchReport, StageSeconds, BENCH_SCHEMA};
pub use infer::{DetectionRecord, DETECTION_SCHEMA};
pub use train::{train_log_path, TrainLogLine};

use actdet::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "actdet", version, about = "Frame-level action detection with temporal channel shift")]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a detector and write its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Detect actions in one clip.
    Infer(InferArgs),
    /// Measure inference throughput of a checkpoint.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `synth.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the log goes next to it as `<stem>.log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress per-step progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `report.json` and `report.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional config supplying `eval.*` and `decode.*` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub score_thresh: Option<f64>,
    #[arg(long)]
    pub iou_thresh: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Frame container of the clip.
    #[arg(long)]
    pub clip: PathBuf,
    /// Detections, one JSON record per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub score_thresh: f64,
    /// Also write the sampled frames with detections drawn in.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Timed clips.
    #[arg(long, default_value_t = 20)]
    pub clips: usize,
    /// Untimed clips run first.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Dataset whose clips are used as input; seeded noise otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Contract { .. } | Error::Generation { .. } => 2,
        Error::Format { .. } | Error::Vocabulary { .. } | Error::Io { .. } | Error::Shape { .. } => 3,
        Error::NonFinite(_) => 4,
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config {
                field: "--threads".into(),
                detail: "must be positive".into(),
            });
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Infer(a) => infer::run(&a),
        Command::Bench(a) => bench::run(&a),
    }
}
