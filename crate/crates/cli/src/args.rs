use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "lpskit",
    version,
    about = "RSSI ranging and trilateration for LoRa-style networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic campaign: raw log, site plan and fused datasets.
    Simulate(SimulateArgs),
    /// Train ranging models for every (kind, gateway) pair.
    Train(TrainArgs),
    /// Score trained models on fused datasets (per-gateway RMSE).
    Range(RangeArgs),
    /// Estimate positions from grouped RSSI readings.
    Position(PositionArgs),
    /// Positioning accuracy table and per-point profile from trained models.
    Report(ReportArgs),
    /// Simulate, train and evaluate the shipped case studies end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Scenario file (`key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Comma-separated model kinds; all nine by default.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<String>,
    /// Predictions are clamped to this multiple of the largest training distance.
    #[arg(long)]
    pub clamp_factor: Option<f64>,
    #[arg(long)]
    pub svr_c: Option<f64>,
    /// SVR tube half-width in metres; defaults to 0.1 of the distance spread.
    #[arg(long)]
    pub svr_eps: Option<f64>,
    /// Fixed spline smoothing parameter in [0, 1]; GCV picks it when absent.
    #[arg(long)]
    pub spline_p: Option<f64>,
    /// Number of boosting stages.
    #[arg(long)]
    pub learners: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `dataset_<gateway>.csv` files, or a raw log plus site plan.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PositionArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// `gateway_id,rssi_dbm` rows; a blank line ends each query.
    #[arg(long)]
    pub readings: PathBuf,
    /// Site plan CSV with the gateway coordinates.
    #[arg(long)]
    pub site: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// The single model kind to range with.
    #[arg(long, default_value = "smoothing_spline")]
    pub kinds: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Test datasets plus `site_plan.csv`.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<String>,
    /// centroid, site_diagonal or fixed:<metres>.
    #[arg(long, default_value = "centroid")]
    pub d_norm_policy: String,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "centroid")]
    pub d_norm_policy: String,
    #[command(flatten)]
    pub fit: FitArgs,
}
