use thiserror::Error;

use crate::fxp::FxPFormat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid fixed-point format: width {width}, frac_bits {frac}")]
    InvalidFormat { width: u32, frac: u32 },

    #[error("non-finite value {0} cannot be quantized")]
    NonFinite(f64),

    #[error("operand formats differ: {0} vs {1}")]
    FormatMismatch(FxPFormat, FxPFormat),

    #[error("shift by {shift} out of range for a {width}-bit datapath")]
    ShiftOutOfRange { shift: u32, width: u32 },

    #[error("{op}: operand {value} outside the convergence domain (limit {limit})")]
    ConvergenceDomain {
        op: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("invalid iteration depth: {0}")]
    InvalidDepth(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Manifest or blob problem, anchored to a manifest line when one applies.
    #[error("manifest error{}: {msg}", fmt_line(*line))]
    Manifest { line: Option<usize>, msg: String },

    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("model error: {0}")]
    Model(String),
}

fn fmt_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn manifest(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Manifest {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn layer(layer: usize, msg: impl Into<String>) -> Self {
        Error::Layer {
            layer,
            msg: msg.into(),
        }
    }
}
