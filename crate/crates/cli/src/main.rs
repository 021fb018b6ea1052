//! `mllm-lab`: one entry point for partition planning, frame packing, token
//! budgets, resampler encoding and gradient checks, document corruption and
//! toy hybrid-RL training. Structured results go out as JSON, training traces
//! as CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mllm_lab::corruption::CorruptionConfig;
use mllm_lab::partition::{DEFAULT_BASE, DEFAULT_MAX_SLICES, DEFAULT_QUERIES};
use mllm_lab::rl::grpo::DEFAULT_P_LONG;
use mllm_lab::tokens::DEFAULT_PATCH_SIDE;
use mllm_lab::video::{DEFAULT_MAX_FPS, DEFAULT_MAX_FRAMES, MAX_AUGMENT_PACKAGE};

mod commands;
mod error;
mod imageio;

use error::CliError;

pub const SEED_ENV: &str = "MLLM_LAB_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "mllm-lab",
    version,
    about = "Efficient multimodal LLM building blocks at desk scale"
)]
struct Cli {
    /// RNG seed for every seeded operation; MLLM_LAB_SEED overrides it when set.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose a slicing grid for a high-resolution image.
    Partition(PartitionArgs),
    /// Sample frame timestamps for a clip and group them into packages.
    Pack(PackArgs),
    /// Visual-token budget of packed video against per-frame baselines.
    Budget(BudgetArgs),
    /// Run the 3D resampler over a feature tensor.
    Encode(EncodeArgs),
    /// Compare analytic resampler gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Emit corrupted document samples from an annotation file.
    Corrupt(CorruptArgs),
    /// Train the tabular policy on the toy arithmetic task.
    TrainToy(TrainToyArgs),
    /// Score response groups, or verify stored reward breakdowns.
    Rewards(RewardsArgs),
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long, required_unless_present = "image", requires = "height")]
    pub width: Option<u32>,
    #[arg(long, required_unless_present = "image", requires = "width")]
    pub height: Option<u32>,
    /// Read the geometry (and pixels, for --slices-out) from a PNG or JPEG.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    pub image: Option<PathBuf>,
    /// Directory for the slice PNGs; needs --image.
    #[arg(long, requires = "image")]
    pub slices_out: Option<PathBuf>,
    /// Encoder pretraining side length.
    #[arg(long, default_value_t = DEFAULT_BASE)]
    pub base: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_SLICES)]
    pub max_slices: u32,
    /// Weight of the area term in the grid score.
    #[arg(long, default_value_t = 1.0)]
    pub area_weight: f64,
    /// Tokens per slice (64 in the reference model).
    #[arg(long, default_value_t = DEFAULT_QUERIES)]
    pub queries: u32,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub duration: f64,
    #[arg(long)]
    pub fps: f64,
    /// Frames per package (up to 6 in the reference model).
    #[arg(long, default_value_t = MAX_AUGMENT_PACKAGE)]
    pub package_size: usize,
    /// Frame cap per video (1080 in the reference model).
    #[arg(long, default_value_t = DEFAULT_MAX_FRAMES)]
    pub max_frames: usize,
    /// Sampling-rate cap (10 fps in the reference model).
    #[arg(long, default_value_t = DEFAULT_MAX_FPS)]
    pub max_fps: f64,
    /// Draw package size and frame rate from the seeded training augmentation.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long)]
    pub frames: u64,
    #[arg(long, default_value_t = MAX_AUGMENT_PACKAGE as u64)]
    pub package_size: u64,
    /// Tokens per package (64 in the reference model).
    #[arg(long, default_value_t = DEFAULT_QUERIES as u64)]
    pub queries: u64,
    /// ViT patch side for the raw-patch compression ratio.
    #[arg(long, default_value_t = DEFAULT_PATCH_SIDE)]
    pub patch_side: u32,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Feature tensor `[frames, patches, feature_dim]`; random features when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Frame count for random features.
    #[arg(long, default_value_t = 12, conflicts_with = "features")]
    pub frames: usize,
    /// Feature width for random features.
    #[arg(long, default_value_t = 16, conflicts_with = "features")]
    pub feature_dim: usize,
    /// Patch grid rows; inferred from a square patch count when absent.
    #[arg(long)]
    pub patch_rows: Option<usize>,
    #[arg(long)]
    pub patch_cols: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub model_dim: usize,
    #[arg(long, default_value_t = DEFAULT_QUERIES as usize)]
    pub queries: usize,
    #[arg(long, default_value_t = MAX_AUGMENT_PACKAGE)]
    pub package_size: usize,
    /// Write the `[packages·queries, model_dim]` output tensor here.
    #[arg(long)]
    pub out_tensor: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    #[arg(long, default_value_t = 2)]
    pub patch_rows: usize,
    #[arg(long, default_value_t = 2)]
    pub patch_cols: usize,
    #[arg(long, default_value_t = 3)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub model_dim: usize,
    #[arg(long, default_value_t = mllm_lab::numerics::DEFAULT_FD_EPS)]
    pub eps: f64,
    /// Exit 2 when the worst relative error reaches this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// JSON lines: {"image": path, "regions": [{"id", "bbox": [x, y, w, h], "text"}]}.
    /// Relative image paths resolve against the annotation file's directory.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output directory for PNGs and targets.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = CorruptionConfig::default().sigma_low)]
    pub sigma_low: f64,
    #[arg(long, default_value_t = CorruptionConfig::default().blur_radius_low)]
    pub blur_radius_low: u32,
    #[arg(long, default_value_t = CorruptionConfig::default().sigma_moderate)]
    pub sigma_moderate: f64,
    #[arg(long, default_value_t = CorruptionConfig::default().fill)]
    pub fill: u8,
    /// Share of regions turned into targets per document.
    #[arg(long, default_value_t = CorruptionConfig::default().target_fraction)]
    pub target_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub prompts_per_batch: usize,
    /// Responses per prompt, G (8 in the reference recipe).
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    /// Probability of long mode per prompt (0.5 in the reference recipe).
    #[arg(long, default_value_t = DEFAULT_P_LONG)]
    pub p_long: f64,
    /// Step size on the tabular logits.
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Largest operand of the addition prompts.
    #[arg(long, default_value_t = 4)]
    pub max_operand: usize,
    /// CSV trace destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump every scored rollout group as JSON lines.
    #[arg(long)]
    pub rollouts_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct RewardsArgs {
    /// JSON lines: {"prompt", "reference", "mode", "responses": [..]}.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Re-check stored rollout groups (as written by train-toy --rollouts-out).
    #[arg(long)]
    pub verify: Option<PathBuf>,
}

fn resolve_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = resolve_seed(cli.seed)?;
    let result = match &cli.command {
        Command::Partition(a) => commands::partition(a, seed)?,
        Command::Pack(a) => commands::pack(a, seed)?,
        Command::Budget(a) => commands::budget(a, seed)?,
        Command::Encode(a) => commands::encode(a, seed)?,
        Command::Gradcheck(a) => commands::gradcheck(a, seed)?,
        Command::Corrupt(a) => commands::corrupt(a, seed)?,
        Command::TrainToy(a) => commands::train_toy(a, seed)?,
        Command::Rewards(a) => commands::rewards(a, seed)?,
    };
    commands::emit(&result, cli.json_out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
