//! `ionext`: dataset generation, training, evaluation, architecture
//! inspection, the ablation ladder and gradient checking.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ionext_core::datahub::Split;
use ionext_core::nn::GatingAxis;

#[derive(Parser)]
#[command(
    name = "ionext",
    version,
    about = "Convolutional inertial odometry toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of IMU sequences with ground truth.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Reconstruct trajectories on a split and write error reports.
    Eval(EvalArgs),
    /// Print stage shapes, parameter count and FLOP estimate of a configuration.
    Inspect(InspectArgs),
    /// Train and evaluate every ablation variant with a fixed short budget.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on the tiny configuration.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub num_train: usize,
    #[arg(long, default_value_t = 4)]
    pub num_val: usize,
    #[arg(long, default_value_t = 4)]
    pub num_test: usize,
    /// Sequence duration in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Window length the data is meant for; sequences must be longer than two windows.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    #[arg(long)]
    pub noise_gyro: Option<f64>,
    #[arg(long)]
    pub noise_accel: Option<f64>,
    #[arg(long)]
    pub bias_gyro: Option<f64>,
    #[arg(long)]
    pub bias_accel: Option<f64>,
    /// Full synthesizer settings as TOML; flags above override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Preset (`default`, `tiny`, `desk`, or an ablation variant name) or TOML file.
    #[arg(long, default_value = "desk")]
    pub model_config: String,
    /// TOML file with training settings.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint carrying optimizer state (e.g. `last.ckpt`).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub report_dir: PathBuf,
    /// RTE horizon in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub horizon: f64,
    /// Reconstruction stride in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub stride: f64,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Preset (`default`, `tiny`, `desk`, or an ablation variant name) or TOML file.
    #[arg(long, default_value = "default")]
    pub model_config: String,
    /// Input window length in samples.
    #[arg(long, default_value_t = 200)]
    pub len: usize,
    /// Also write the summary and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subset of variants to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value = "time", value_parser = parse_axis)]
    pub gating_axis: GatingAxis,
    /// Check the variant without the gating unit.
    #[arg(long)]
    pub no_stgu: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Number of randomly sampled parameters.
    #[arg(long, default_value_t = 200)]
    pub sampled: usize,
    /// Also write the per-parameter table and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<GatingAxis, String> {
    match s {
        "time" => Ok(GatingAxis::Time),
        "channel" => Ok(GatingAxis::Channel),
        _ => Err(format!("expected `time` or `channel`, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
