//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ric_core::ConvMode;

use crate::config::Precision;

/// Environment variable supplying the default for `--data-dir`.
pub const DATA_DIR_ENV: &str = "RIC_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Debug, Parser)]
#[command(
    name = "ric",
    version,
    about = "Rotation-invariant coordinate convolution experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the offset field of an (n, H) grid as CSV.
    Offsets(OffsetsArgs),
    /// Train a baseline network and save a checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on rotated copies of the test set.
    Eval(EvalArgs),
    /// Per-layer mean relative error between rotated and original feature maps.
    Equivariance(EquivarianceArgs),
    /// Forward-pass throughput and parameter counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct OffsetsArgs {
    /// Kernel half-size; the kernel is (2n+1) x (2n+1).
    #[arg(long)]
    pub n: usize,
    /// Grid height; must be a positive even integer.
    #[arg(long)]
    pub height: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with the MNIST IDX files.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    pub arch: ConvMode,
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; defaults to `<output_dir>/<arch>.ckpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epoch log CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Inclusive angle range in degrees, `start:stop:step`.
    #[arg(long, default_value = "0:350:10")]
    pub angles: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate only the first N test images.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["model", "random"])))]
pub struct EquivarianceArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use a freshly initialized network instead of a checkpoint.
    #[arg(long)]
    pub random: bool,
    /// Architecture of the random network.
    #[arg(long, value_parser = parse_arch, default_value = "ric")]
    pub arch: ConvMode,
    /// Initialization seed of the random network.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test-set image to rotate.
    #[arg(long, default_value_t = 0)]
    pub image_index: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark a single architecture; both when omitted.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ConvMode>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<ConvMode, String> {
    s.parse()
}
