//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "SMD_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "smd", version, about = "Stereo mixture density toolkit")]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset to disk.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict disparity (and uncertainty) maps.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Evaluate several checkpoints side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub train: usize,
    #[arg(long, default_value_t = 8)]
    pub val: usize,
    #[arg(long, default_value_t = 16)]
    pub test: usize,
    /// Test scenes with the out-of-domain texture family.
    #[arg(long, default_value_t = 0)]
    pub test_ood: usize,
    #[arg(long, default_value_t = 4)]
    pub sr: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 2.0)]
    pub d_lo: f64,
    #[arg(long, default_value_t = 16.0)]
    pub d_hi: f64,
    #[arg(long, default_value_t = 20.0)]
    pub d_max: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Continue from this checkpoint; its settings must match the flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps (the checkpoint stays resumable).
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Per-step loss CSV; defaults to the checkpoint path with `.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long, default_value = "bimodal", value_parser = ["bimodal", "unimodal", "l1"])]
    pub head: String,
    #[arg(long, default_value = "dda", value_parser = ["random", "dda"])]
    pub sampling: String,
    /// Dilation kernel size for DDA sampling.
    #[arg(long, default_value_t = 10)]
    pub rho: usize,
    #[arg(long, default_value = "super", value_parser = ["base", "super"])]
    pub gt_res: String,
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub steps_per_epoch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Multiplier on the head widths (1024, 512, 256, 128).
    #[arg(long, default_value_t = 0.125)]
    pub width_factor: f64,
    #[arg(long, default_value_t = 30.0)]
    pub frequency: f64,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single sample directory.
    #[arg(long, conflicts_with = "split")]
    pub sample: Option<PathBuf>,
    /// Every sample of a dataset split.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "pred")]
    pub out: PathBuf,
    /// Output resolution relative to the input images.
    #[arg(long, default_value_t = 1)]
    pub out_scale: usize,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    /// Skip the entropy map.
    #[arg(long)]
    pub no_uncertainty: bool,
    /// Skip the colorized PNGs.
    #[arg(long)]
    pub no_png: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction root as written by `infer --split`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report path; a `.json` twin is written next to it.
    #[arg(long, default_value = "report.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    /// Table path; a `.json` twin is written next to it.
    #[arg(long, default_value = "compare.txt")]
    pub out: PathBuf,
}
