//! Report documents written by each command.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use carmen_core::afu::AfKind;
use carmen_core::engine::{ModePolicy, RunStats, SensitivityMetric};

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub command: String,
    pub model: String,
    pub model_name: String,
    pub weights: String,
    pub input: Option<String>,
    pub labels: Option<String>,
    pub calib: Option<String>,
    pub precision: String,
    pub width: u32,
    pub mode: Option<String>,
    pub tau: Option<f64>,
    pub metric: Option<SensitivityMetric>,
    pub iters_accurate: u32,
    pub iters_approx: u32,
    pub af_iters: u32,
    pub num_pes: usize,
    pub bank_depth: usize,
    pub refill_cycles: u64,
    pub limit: Option<usize>,
    pub samples: usize,
}

/// Top-1 accuracies as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1_fxp: f64,
    pub top1_oracle: f64,
    /// `top1_oracle - top1_fxp`.
    pub delta: f64,
}

impl Accuracy {
    pub fn new(top1_fxp: f64, top1_oracle: f64) -> Self {
        Self {
            top1_fxp,
            top1_oracle,
            delta: top1_oracle - top1_fxp,
        }
    }
}

/// Batch cycle totals under uniform accurate and uniform approximate
/// policies. `mac_*` count only the PE array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleTotals {
    pub accurate: u64,
    pub approximate: u64,
    pub reduction_pct: f64,
    pub mac_accurate: u64,
    pub mac_approximate: u64,
    pub mac_reduction_pct: f64,
    /// Cycles under the policy actually run.
    pub policy: u64,
}

pub fn reduction_pct(accurate: u64, approximate: u64) -> f64 {
    if accurate == 0 {
        0.0
    } else {
        100.0 * (accurate as f64 - approximate as f64) / accurate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generated_unix: u64,
    pub config: ConfigEcho,
    pub policy: ModePolicy,
    /// Per-layer sensitivities when the policy was derived from them.
    pub sensitivities: Option<Vec<f64>>,
    /// Present when labels were supplied.
    pub accuracy: Option<Accuracy>,
    /// Fraction of samples whose top-1 class matches the reference network.
    pub oracle_agreement: f64,
    pub cycles: CycleTotals,
    pub max_af_error: BTreeMap<AfKind, f64>,
    /// Largest |output - reference| over all samples and outputs.
    pub max_output_error: f64,
    /// SHA-256 over the raw output words of every sample, in order.
    pub output_sha256: String,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub precision: String,
    pub width: u32,
    pub depth: u32,
    pub depth_approx: u32,
    pub accuracy: Option<Accuracy>,
    pub oracle_agreement: f64,
    pub total_cycles: u64,
    pub mac_cycles: u64,
    pub max_output_error: f64,
    pub mean_output_error: f64,
    /// Per-sample max |output - reference|.
    pub sample_errors: Vec<f64>,
}

/// Depth trend for one precision, depths ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrend {
    pub precision: String,
    pub depths: Vec<u32>,
    pub samples: usize,
    /// Samples whose error never grows with depth.
    pub monotone_samples: usize,
    pub monotone_fraction: f64,
    /// Accuracy never drops by more than one sample between depths.
    pub accuracy_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub generated_unix: u64,
    pub config: ConfigEcho,
    pub cells: Vec<SweepCell>,
    pub trends: Vec<DepthTrend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub layer: usize,
    pub activation: AfKind,
    pub fan_in: usize,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub generated_unix: u64,
    pub config: ConfigEcho,
    /// Most sensitive first; ties keep layer order.
    pub ranked: Vec<LayerSensitivity>,
    /// Policy induced by `--tau`, when given.
    pub policy: Option<ModePolicy>,
}
