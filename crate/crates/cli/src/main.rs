//! `beaconlabel`: simulate, calibrate, generate, refine and evaluate labels.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "beaconlabel", version, about = "Automatic 2D/3D labels from positioning beacons")]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Estimate T_cam←robot from beacon/pixel correspondences.
    Calibrate(CalibrateArgs),
    /// Produce unrefined labels for every dataset sample.
    Generate(GenerateArgs),
    /// Snap 3D labels onto the LiDAR points.
    Refine(RefineArgs),
    /// Compare label sets, or run the down-sampling study.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Switch off beacon, pixel and range noise.
    #[arg(long)]
    pub noise_free: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Defaults to `<dataset>/calibration/correspondences.csv`.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    /// Defaults to `<dataset>/calibration/robot_beacons.csv`.
    #[arg(long)]
    pub robot_beacons: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, action = ArgAction::SetTrue, overrides_with = "no_planar")]
    pub planar: bool,
    #[arg(long, action = ArgAction::SetTrue, overrides_with = "planar")]
    pub no_planar: bool,
    /// RANSAC inlier threshold, pixels.
    #[arg(long)]
    pub delta_px: Option<f64>,
    /// Fit every correspondence instead of running RANSAC.
    #[arg(long)]
    pub all_points: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Calibration report from `calibrate`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Downsample,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Label directory to score.
    #[arg(long)]
    pub auto: Option<PathBuf>,
    /// Reference labels; defaults to the dataset's ground truth.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Report file, or output directory with `--study`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one CSV row per matched pair.
    #[arg(long)]
    pub pairs_csv: Option<PathBuf>,
    /// Calibration reports whose RMSE values are summarized in the report.
    #[arg(long, num_args = 1..)]
    pub calibrations: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub study: Option<Study>,
    /// Unrefined labels for the study (default: `--auto`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub proportions: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    let ctx = commands::Context { seed: cli.seed.or(cfg.seed), cfg };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Refine(a) => commands::refine(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("beaconlabel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
