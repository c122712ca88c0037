use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use lcta_core::regression::{parse_factors, Factor};

#[derive(Debug, Parser)]
#[command(
    name = "lcta",
    version,
    about = "Learning-check-testing analytics pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the 2PL model to LCT responses by joint maximum likelihood.
    Calibrate(CalibrateArgs),
    /// Predict pass/fail from ability with a single threshold.
    Classify(ClassifyArgs),
    /// Regress final-exam scores on the chosen factors.
    Regress(RegressArgs),
    /// Encode attendance and LCT outcomes as per-group heatmap matrices.
    Encode(EncodeArgs),
    /// Ability histograms, placement scatter and LCT/FPC frequency tables.
    Report(ReportArgs),
    /// Run every stage on a simulated cohort and write a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulator configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["files", "dataset"])))]
pub struct CalibrateArgs {
    /// Session response matrices (`lct_<session>.csv`), joined in the given order.
    #[arg(conflicts_with = "dataset")]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("labels").required(true).args(["records", "dataset"])))]
pub struct ClassifyArgs {
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Fixed ability threshold; fitted to the data when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FactorList(pub Vec<Factor>);

impl Default for FactorList {
    fn default() -> Self {
        Self(Factor::ALL.to_vec())
    }
}

fn factor_list(s: &str) -> Result<FactorList, String> {
    parse_factors(s).map(FactorList).map_err(|e| e.to_string())
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Comma-separated factors; all known factors when omitted.
    #[arg(long, value_parser = factor_list)]
    pub factors: Option<FactorList>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Correct answers needed to pass an LCT (default: 60 % of its items).
    #[arg(long)]
    pub pass_mark: Option<usize>,
    /// LCT code (1-5) for a student with no row in a session.
    #[arg(long)]
    pub missing_lct: Option<u8>,
    /// Card code (1-5) for a missing card record.
    #[arg(long)]
    pub missing_card: Option<u8>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportOptions {
    /// Histogram bin width on the ability scale.
    #[arg(long, default_value_t = 0.25, value_parser = positive)]
    pub bins: f64,
    #[arg(long)]
    pub risk_fail_gt: Option<u32>,
    #[arg(long)]
    pub strong_succ_ge: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub options: ReportOptions,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = factor_list)]
    pub factors: Option<FactorList>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub report: ReportOptions,
}
