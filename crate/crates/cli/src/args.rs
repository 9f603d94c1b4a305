//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use carmen_core::engine::SensitivityMetric;
use carmen_core::mac::MacKind;

#[derive(Debug, Parser)]
#[command(
    name = "carmen",
    version,
    about = "Emulate a CORDIC inference engine on a quantized network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch end to end and report accuracy, cycles and AF errors.
    Run(RunArgs),
    /// Grid over precisions and iteration depths.
    Sweep(SweepArgs),
    /// Per-layer sensitivity to approximate MACs.
    Profile(ProfileArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    Fxp8,
    Fxp16,
}

impl Precision {
    pub fn width(self) -> u32 {
        match self {
            Precision::Fxp8 => 8,
            Precision::Fxp16 => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fxp8 => "fxp8",
            Precision::Fxp16 => "fxp16",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Accurate,
    #[value(alias = "approximate")]
    Approx,
    /// Pick per layer from the sensitivity profile and `--tau`.
    Auto,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Accurate => "accurate",
            Mode::Approx => "approx",
            Mode::Auto => "auto",
        }
    }

    /// Uniform MAC kind, `None` for auto.
    pub fn kind(self) -> Option<MacKind> {
        match self {
            Mode::Accurate => Some(MacKind::Accurate),
            Mode::Approx => Some(MacKind::Approximate),
            Mode::Auto => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Metric {
    #[default]
    RelativeL1,
    Top1Flip,
}

impl From<Metric> for SensitivityMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::RelativeL1 => SensitivityMetric::RelativeL1,
            Metric::Top1Flip => SensitivityMetric::Top1Flip,
        }
    }
}

/// Model files and engine knobs shared by every command.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON model manifest.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Raw little-endian f32 weight blob.
    #[arg(long, value_name = "PATH")]
    pub weights: PathBuf,
    /// Calibration inputs (`count dim` header + f32 data).
    #[arg(long, value_name = "PATH")]
    pub calib: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::Fxp16)]
    pub precision: Precision,
    /// Accurate-mode MAC iterations (default: datapath width).
    #[arg(long, value_name = "N")]
    pub iters_accurate: Option<u32>,
    /// Approximate-mode MAC iterations (default: ceil(2/3 of accurate)).
    #[arg(long, value_name = "N")]
    pub iters_approx: Option<u32>,
    /// Report path; defaults to `$CARMEN_REPORT_DIR/<command>-report.json`.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Worker threads for batch evaluation.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Use only the first N samples.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Do not print the text table.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Inputs to evaluate.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// One class index per line, aligned with `--input`.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Accurate)]
    pub mode: Mode,
    /// Sensitivity threshold for `--mode auto`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = Metric::RelativeL1)]
    pub metric: Metric,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// Accurate iteration depths, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub depths: Vec<u32>,
    /// Precisions, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1..)]
    pub precisions: Vec<Precision>,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Threshold; layers with sensitivity <= tau run approximate.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = Metric::RelativeL1)]
    pub metric: Metric,
}
