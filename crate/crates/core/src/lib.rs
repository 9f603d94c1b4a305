//! Bit-accurate, cycle-accounted emulator of an iterative-CORDIC
//! multi-precision inference engine.
//!
//! All arithmetic on the emulated datapath goes through [`fxp`] words and
//! the [`cordic`] shift-add engine. [`mac`] builds multiply-accumulate and
//! dot products on top, [`afu`] the shared activation-function unit,
//! [`peripherals`] pooling and normalization, and [`engine`] schedules
//! whole networks across the PE array while counting cycles.
//! [`model`] loads manifests, calibrates per-tensor formats and provides
//! the double-precision reference.

pub mod afu;
pub mod cordic;
pub mod engine;
mod error;
pub mod fxp;
pub mod mac;
pub mod model;
pub mod peripherals;
mod tally;

pub use error::{Error, Result};
pub use fxp::{FxPFormat, FxPWord};
pub use tally::Tally;
