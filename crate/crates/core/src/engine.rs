//! Vector-engine simulator.
//!
//! Output neurons of a layer are dealt round-robin to `num_pes` iterative
//! MAC units, so a layer takes `ceil(dots / num_pes)` waves. Each dot streams
//! its operands through a kernel bank of `bank_depth` entries, one refill per
//! tile. Activation, pooling and normalization values then queue through
//! single shared units and their cycles add serially.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::afu::{apply, AfKind};
use crate::cordic::check_depth;
use crate::error::{Error, Result};
use crate::fxp::{dequantize, FxPWord};
use crate::mac::{dot_acc, MacKind, MacMode};
use crate::model::{Geometry, InputSet, QuantizedModel};
use crate::peripherals::{normalize_map, pool_map};
use crate::tally::Tally;

pub const DEFAULT_PES: usize = 64;
pub const BANK_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub num_pes: usize,
    pub bank_depth: usize,
    /// Cycles per kernel-bank refill.
    pub refill_cycles: u64,
    /// Accurate/approximate depths; the kind is taken from the policy.
    pub mac: MacMode,
    pub af_depth: u32,
}

impl EngineConfig {
    /// Defaults for a `width`-bit datapath.
    pub fn new(width: u32) -> Self {
        Self {
            num_pes: DEFAULT_PES,
            bank_depth: BANK_DEPTH,
            refill_cycles: 1,
            mac: MacMode::defaults(MacKind::Accurate, width),
            af_depth: width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pes == 0 {
            return Err(Error::Config("num_pes must be at least 1".into()));
        }
        if self.bank_depth == 0 {
            return Err(Error::Config("bank_depth must be at least 1".into()));
        }
        MacMode::new(
            self.mac.kind,
            self.mac.depth_accurate,
            self.mac.depth_approx,
        )?;
        check_depth(self.af_depth)
    }

    pub fn mode(&self, kind: MacKind) -> MacMode {
        self.mac.with_kind(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum PolicySource {
    Manual,
    Auto { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePolicy {
    pub modes: Vec<MacKind>,
    #[serde(flatten)]
    pub source: PolicySource,
}

impl ModePolicy {
    pub fn uniform(kind: MacKind, layers: usize) -> Self {
        Self {
            modes: vec![kind; layers],
            source: PolicySource::Manual,
        }
    }

    /// Manifest hints where present, `default` elsewhere.
    pub fn from_hints(model: &QuantizedModel, default: MacKind) -> Self {
        Self {
            modes: model
                .layers
                .iter()
                .map(|l| l.spec.mode_hint.unwrap_or(default))
                .collect(),
            source: PolicySource::Manual,
        }
    }

    /// Indices of approximate layers.
    pub fn approximate_set(&self) -> Vec<usize> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == MacKind::Approximate)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub dots: usize,
    pub fan_in: usize,
    pub waves: usize,
    pub tiles_per_dot: usize,
    pub bank_fills: usize,
    pub depth: u32,
    pub mac_cycles: u64,
    pub bank_cycles: u64,
    pub peak_bank_occupancy: usize,
}

/// Static schedule of one layer's MAC phase.
pub fn schedule_layer(geometry: &Geometry, depth: u32, cfg: &EngineConfig) -> LayerPlan {
    let dots = geometry.dots();
    let fan_in = geometry.fan_in();
    let pes = cfg.num_pes.max(1);
    let bank = cfg.bank_depth.max(1);
    let waves = dots.div_ceil(pes);
    let tiles_per_dot = fan_in.div_ceil(bank);
    let bank_fills = waves * tiles_per_dot;
    LayerPlan {
        dots,
        fan_in,
        waves,
        tiles_per_dot,
        bank_fills,
        depth,
        mac_cycles: (waves * fan_in) as u64 * depth as u64,
        bank_cycles: bank_fills as u64 * cfg.refill_cycles,
        peak_bank_occupancy: fan_in.min(bank),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mode: MacKind,
    pub mac_cycles: u64,
    pub bank_cycles: u64,
    pub af_cycles: u64,
    pub pool_cycles: u64,
    pub norm_cycles: u64,
    pub total_cycles: u64,
    pub mac_ops: u64,
    pub af_ops: u64,
    pub saturations: u64,
    pub peak_bank_occupancy: usize,
    /// Busy PE-cycles over available PE-cycles during the MAC phase.
    pub pe_utilization: f64,
}

impl LayerStats {
    fn merge(&mut self, o: &LayerStats) {
        self.mac_cycles += o.mac_cycles;
        self.bank_cycles += o.bank_cycles;
        self.af_cycles += o.af_cycles;
        self.pool_cycles += o.pool_cycles;
        self.norm_cycles += o.norm_cycles;
        self.total_cycles += o.total_cycles;
        self.mac_ops += o.mac_ops;
        self.af_ops += o.af_ops;
        self.saturations += o.saturations;
        self.peak_bank_occupancy = self.peak_bank_occupancy.max(o.peak_bank_occupancy);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub samples: usize,
    pub total_cycles: u64,
    pub layers: Vec<LayerStats>,
    pub mac_cycles: u64,
    pub af_cycles: u64,
    pub mac_ops: u64,
    pub af_ops: u64,
    pub af_op_fraction: f64,
    pub af_cycle_fraction: f64,
    pub pe_utilization: f64,
    pub saturation_count: u64,
    pub peak_bank_occupancy: usize,
    /// Largest |unit output - reference| per activation kind.
    pub max_af_error: BTreeMap<AfKind, f64>,
}

impl RunStats {
    fn from_layers(
        layers: Vec<LayerStats>,
        samples: usize,
        max_af_error: BTreeMap<AfKind, f64>,
    ) -> Self {
        let sum = |f: fn(&LayerStats) -> u64| layers.iter().map(f).sum::<u64>();
        let total_cycles = sum(|l| l.total_cycles);
        let mac_cycles = sum(|l| l.mac_cycles);
        let af_cycles = sum(|l| l.af_cycles);
        let mac_ops = sum(|l| l.mac_ops);
        let af_ops = sum(|l| l.af_ops);
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let weighted: f64 = layers
            .iter()
            .map(|l| l.pe_utilization * l.mac_cycles as f64)
            .sum();
        RunStats {
            samples,
            total_cycles,
            mac_cycles,
            af_cycles,
            mac_ops,
            af_ops,
            af_op_fraction: ratio(af_ops, af_ops + mac_ops),
            af_cycle_fraction: ratio(af_cycles, total_cycles),
            pe_utilization: if mac_cycles == 0 {
                0.0
            } else {
                weighted / mac_cycles as f64
            },
            saturation_count: sum(|l| l.saturations),
            peak_bank_occupancy: layers
                .iter()
                .map(|l| l.peak_bank_occupancy)
                .max()
                .unwrap_or(0),
            layers,
            max_af_error,
        }
    }

    /// Combine per-sample stats in order.
    pub fn merge_all<'a>(items: impl IntoIterator<Item = &'a RunStats>) -> RunStats {
        let mut layers: Vec<LayerStats> = Vec::new();
        let mut errs: BTreeMap<AfKind, f64> = BTreeMap::new();
        let mut samples = 0;
        for s in items {
            samples += s.samples;
            if layers.is_empty() {
                layers = s.layers.clone();
            } else {
                for (a, b) in layers.iter_mut().zip(&s.layers) {
                    a.merge(b);
                }
            }
            for (&k, &v) in &s.max_af_error {
                let e = errs.entry(k).or_insert(0.0);
                *e = e.max(v);
            }
        }
        RunStats::from_layers(layers, samples, errs)
    }
}

/// Result of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Final layer output after activation, pooling and normalization.
    pub output: Vec<FxPWord>,
    /// Final layer pre-activation values.
    pub logits: Vec<FxPWord>,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn output_f64(&self) -> Vec<f64> {
        self.output.iter().map(|&w| dequantize(w)).collect()
    }

    pub fn logits_f64(&self) -> Vec<f64> {
        self.logits.iter().map(|&w| dequantize(w)).collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Execute every layer in order on the emulated datapath.
pub fn run_network(
    model: &QuantizedModel,
    input: &[f32],
    policy: &ModePolicy,
    cfg: &EngineConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    if policy.modes.len() != model.layers.len() {
        return Err(Error::Config(format!(
            "policy covers {} layers, model has {}",
            policy.modes.len(),
            model.layers.len()
        )));
    }
    let mut x = model.quantize_input(input)?;
    let mut logits = Vec::new();
    let mut layer_stats = Vec::with_capacity(model.layers.len());
    let mut af_err: BTreeMap<AfKind, f64> = BTreeMap::new();
    let mut buf = Vec::new();
    for (li, (layer, &kind)) in model.layers.iter().zip(&policy.modes).enumerate() {
        let g = &layer.spec.geometry;
        if x.len() != g.in_len() {
            return Err(Error::layer(
                li,
                format!("got {} inputs, expects {}", x.len(), g.in_len()),
            ));
        }
        if let Some(w) = x.iter().find(|w| w.format() != layer.in_fmt) {
            return Err(Error::layer(
                li,
                format!("input format {} vs {}", w.format(), layer.in_fmt),
            ));
        }
        let mode = cfg.mode(kind);
        let plan = schedule_layer(g, mode.depth(), cfg);
        let fan = plan.fan_in;
        let zero = FxPWord::zero(layer.in_fmt);
        let mut pre = Vec::with_capacity(plan.dots);
        let mut mac_tally = Tally::default();
        let mut wave_cycles = 0u64;
        let mut mac_cycles = 0u64;
        for d in 0..plan.dots {
            g.gather(&x, d, zero, &mut buf);
            let oc = g.channel_of(d);
            let (y, t) = dot_acc(
                layer.bias[oc],
                &layer.weights[oc * fan..(oc + 1) * fan],
                &buf,
                mode,
            )
            .map_err(|e| Error::layer(li, e.to_string()))?;
            wave_cycles = wave_cycles.max(t.cycles);
            if (d + 1) % cfg.num_pes == 0 || d + 1 == plan.dots {
                mac_cycles += wave_cycles;
                wave_cycles = 0;
            }
            mac_tally.saturations += t.saturations;
            pre.push(y);
        }
        let af = layer.spec.activation;
        let (post, af_tally) = apply(af, &pre, layer.af_fmt, cfg.af_depth)
            .map_err(|e| Error::layer(li, e.to_string()))?;
        let pre_f: Vec<f64> = pre.iter().map(|&w| dequantize(w)).collect();
        let worst = af
            .reference(&pre_f)
            .iter()
            .zip(&post)
            .map(|(r, &y)| (dequantize(y) - r).abs())
            .fold(0.0, f64::max);
        let e = af_err.entry(af).or_insert(0.0);
        *e = e.max(worst);

        let (pooled, shape, pool_tally) = match &layer.spec.pool {
            Some(p) => {
                pool_map(&post, g.out_shape(), p).map_err(|e| Error::layer(li, e.to_string()))?
            }
            None => (post, g.out_shape(), Tally::default()),
        };
        let (out, norm_tally) = match &layer.norm {
            Some((spec, fmt)) => {
                normalize_map(&pooled, shape[1] * shape[2], spec, *fmt, mode.depth())
                    .map_err(|e| Error::layer(li, e.to_string()))?
            }
            None => (pooled, Tally::default()),
        };
        let mut s = LayerStats {
            mode: kind,
            mac_cycles,
            bank_cycles: plan.bank_cycles,
            af_cycles: af_tally.cycles,
            pool_cycles: pool_tally.cycles,
            norm_cycles: norm_tally.cycles,
            total_cycles: 0,
            mac_ops: (plan.dots * fan) as u64,
            af_ops: pre.len() as u64,
            saturations: mac_tally.saturations
                + af_tally.saturations
                + pool_tally.saturations
                + norm_tally.saturations,
            peak_bank_occupancy: plan.peak_bank_occupancy,
            pe_utilization: plan.dots as f64 / (plan.waves * cfg.num_pes) as f64,
        };
        s.total_cycles = s.mac_cycles + s.bank_cycles + s.af_cycles + s.pool_cycles + s.norm_cycles;
        layer_stats.push(s);
        if li + 1 == model.layers.len() {
            logits = pre;
        }
        x = out;
    }
    Ok(RunOutput {
        output: x,
        logits,
        stats: RunStats::from_layers(layer_stats, 1, af_err),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub runs: Vec<RunOutput>,
    pub stats: RunStats,
}

impl BatchOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.runs.iter().map(|r| argmax(&r.output_f64())).collect()
    }
}

#[cfg(feature = "parallel")]
fn map_samples<T: Send>(
    inputs: &InputSet,
    f: impl Fn(&[f32]) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    inputs.data.par_chunks_exact(inputs.dim).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_samples<T: Send>(
    inputs: &InputSet,
    f: impl Fn(&[f32]) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    inputs.iter().map(f).collect()
}

/// Run every sample; with the `parallel` feature samples are spread over
/// the rayon pool. Each sample is evaluated independently and results are
/// collected in input order, so the output does not depend on threading.
pub fn run_batch(
    model: &QuantizedModel,
    inputs: &InputSet,
    policy: &ModePolicy,
    cfg: &EngineConfig,
) -> Result<BatchOutput> {
    let runs = map_samples(inputs, |x| run_network(model, x, policy, cfg))?;
    let stats = RunStats::merge_all(runs.iter().map(|r| &r.stats));
    Ok(BatchOutput { runs, stats })
}

/// Sequential reference for [`run_batch`].
pub fn run_batch_serial(
    model: &QuantizedModel,
    inputs: &InputSet,
    policy: &ModePolicy,
    cfg: &EngineConfig,
) -> Result<BatchOutput> {
    let runs = inputs
        .iter()
        .map(|x| run_network(model, x, policy, cfg))
        .collect::<Result<Vec<_>>>()?;
    let stats = RunStats::merge_all(runs.iter().map(|r| &r.stats));
    Ok(BatchOutput { runs, stats })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMetric {
    /// Mean relative L1 change of the final-layer logits.
    #[default]
    RelativeL1,
    /// Fraction of samples whose top-1 class changes.
    Top1Flip,
}

const SENSITIVITY_EPS: f64 = 1e-12;

/// Per-layer sensitivity: each layer alone runs approximate while the rest
/// stay accurate, compared with the all-accurate run.
pub fn sensitivity_profile(
    model: &QuantizedModel,
    calib: &InputSet,
    cfg: &EngineConfig,
    metric: SensitivityMetric,
) -> Result<Vec<f64>> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let n = model.layers.len();
    let base = run_batch(
        model,
        calib,
        &ModePolicy::uniform(MacKind::Accurate, n),
        cfg,
    )?;
    let base_logits: Vec<Vec<f64>> = base.runs.iter().map(|r| r.logits_f64()).collect();
    let base_top: Vec<usize> = base.predictions();
    (0..n)
        .map(|l| {
            let mut p = ModePolicy::uniform(MacKind::Accurate, n);
            p.modes[l] = MacKind::Approximate;
            let out = run_batch(model, calib, &p, cfg)?;
            let total: f64 = match metric {
                SensitivityMetric::RelativeL1 => out
                    .runs
                    .iter()
                    .zip(&base_logits)
                    .map(|(r, b)| {
                        let d: f64 = r
                            .logits_f64()
                            .iter()
                            .zip(b)
                            .map(|(x, y)| (x - y).abs())
                            .sum();
                        d / (b.iter().map(|v| v.abs()).sum::<f64>() + SENSITIVITY_EPS)
                    })
                    .sum(),
                SensitivityMetric::Top1Flip => out
                    .predictions()
                    .iter()
                    .zip(&base_top)
                    .filter(|(a, b)| a != b)
                    .count() as f64,
            };
            Ok(total / calib.len() as f64)
        })
        .collect()
}

/// `s <= tau` runs approximate.
pub fn select_modes(sensitivities: &[f64], tau: f64) -> Result<ModePolicy> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Config(format!("threshold {tau} must be >= 0")));
    }
    Ok(ModePolicy {
        modes: sensitivities
            .iter()
            .map(|&s| {
                if s <= tau {
                    MacKind::Approximate
                } else {
                    MacKind::Accurate
                }
            })
            .collect(),
        source: PolicySource::Auto { tau },
    })
}
