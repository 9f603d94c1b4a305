//! Iterative CORDIC multiply-accumulate.
//!
//! A MAC is one linear rotation: the weight sits in `x`, the running sum in
//! `y`, and the activation is driven out of `z`. Approximate mode runs only
//! the first `depth_approx` iterations, dropping the least significant
//! corrections. Activations with |x| >= 2 are range-reduced by moving the
//! binary point of `z` and pre-shifting the weight; the barrel shift
//! happens at operand load and costs no extra cycle.

use serde::{Deserialize, Serialize};

use crate::cordic::{rotate_linear, z_register, CordicState, MAX_DEPTH};
use crate::error::{Error, Result};
use crate::fxp::{rescale, FxPFormat, FxPWord, GUARD_BITS};
use crate::tally::Tally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacKind {
    Accurate,
    #[serde(alias = "approx")]
    Approximate,
}

impl std::fmt::Display for MacKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MacKind::Accurate => "accurate",
            MacKind::Approximate => "approximate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacMode {
    pub kind: MacKind,
    pub depth_accurate: u32,
    pub depth_approx: u32,
}

/// Default approximate depth for a given accurate depth: `ceil(2d/3)`.
pub fn default_approx_depth(depth_accurate: u32) -> u32 {
    (2 * depth_accurate).div_ceil(3)
}

/// Default depth table: accurate runs one iteration per format bit.
pub fn iterations_for(kind: MacKind, fmt: FxPFormat) -> u32 {
    let accurate = fmt.width();
    match kind {
        MacKind::Accurate => accurate,
        MacKind::Approximate => default_approx_depth(accurate),
    }
}

impl MacMode {
    pub fn new(kind: MacKind, depth_accurate: u32, depth_approx: u32) -> Result<Self> {
        if !(2..=MAX_DEPTH).contains(&depth_accurate) {
            return Err(Error::InvalidDepth(format!(
                "accurate depth {depth_accurate} (expected 2..={MAX_DEPTH})"
            )));
        }
        if depth_approx == 0 || depth_approx >= depth_accurate {
            return Err(Error::InvalidDepth(format!(
                "approximate depth {depth_approx} must be in 1..{depth_accurate}"
            )));
        }
        Ok(Self {
            kind,
            depth_accurate,
            depth_approx,
        })
    }

    /// Defaults for an engine width (8 -> 8/6, 16 -> 16/11).
    pub fn defaults(kind: MacKind, width: u32) -> Self {
        Self {
            kind,
            depth_accurate: width,
            depth_approx: default_approx_depth(width),
        }
    }

    /// Accurate depth `d` with the default approximate depth for it.
    pub fn with_accurate_depth(kind: MacKind, depth_accurate: u32) -> Result<Self> {
        Self::new(
            kind,
            depth_accurate,
            default_approx_depth(depth_accurate).min(depth_accurate.saturating_sub(1)),
        )
    }

    pub fn with_kind(self, kind: MacKind) -> Self {
        Self { kind, ..self }
    }

    pub fn depth(&self) -> u32 {
        match self.kind {
            MacKind::Accurate => self.depth_accurate,
            MacKind::Approximate => self.depth_approx,
        }
    }

    /// Fractional cycle saving of approximate over accurate mode.
    pub fn cycle_reduction(&self) -> f64 {
        1.0 - self.depth_approx as f64 / self.depth_accurate as f64
    }
}

/// Weight and activation loaded into the CORDIC registers for one MAC.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MacOperands {
    x: i64,
    z: i64,
    z_frac: u32,
}

impl MacOperands {
    /// Align the weight to the accumulator grid and range-reduce the
    /// activation so |z| < 2.
    #[inline]
    pub(crate) fn load(w: FxPWord, x: FxPWord, acc_frac: u32) -> Self {
        let mut z_frac = x.format().frac_bits() + GUARD_BITS;
        let z = x.raw() << GUARD_BITS;
        let mag = z.unsigned_abs();
        let mut k = 0;
        while mag >= 2u64 << (z_frac) {
            k += 1;
            z_frac += 1;
        }
        let xw = rescale(w.raw(), w.format().frac_bits(), acc_frac);
        Self {
            x: xw.saturating_mul(1 << k),
            z,
            z_frac,
        }
    }
}

impl MacOperands {
    /// Raw operands already on a register grid: `w` at `acc_frac`, `x` at
    /// `x_frac`.
    #[inline]
    pub(crate) fn load_raw(w: i64, x: i64, x_frac: u32) -> Self {
        let mut z_frac = x_frac;
        let mag = x.unsigned_abs();
        let mut k = 0;
        while mag >= 2u64 << z_frac {
            k += 1;
            z_frac += 1;
        }
        Self {
            x: w.saturating_mul(1 << k),
            z: x,
            z_frac,
        }
    }
}

/// `a*b` with `a` on register `reg` and `b` at `b_frac`; `b` is driven
/// through `z`, the product lands on `reg`.
#[inline]
pub(crate) fn mul_reg(a: i64, b: i64, b_frac: u32, reg: FxPFormat, depth: u32) -> (i64, Tally) {
    let st = mac_reg(0, reg, MacOperands::load_raw(a, b, b_frac), depth);
    (st.y, st.tally())
}

/// One MAC on an accumulator register (raw `y` on `acc_reg`).
#[inline]
pub(crate) fn mac_reg(y: i64, acc_reg: FxPFormat, ops: MacOperands, depth: u32) -> CordicState {
    rotate_linear(
        CordicState::new(ops.x, y, ops.z, acc_reg, z_register(ops.z_frac)),
        depth,
    )
}

/// `acc + w*x` in acc's format.
pub fn mac(acc: FxPWord, w: FxPWord, x: FxPWord, mode: MacMode) -> Result<(FxPWord, Tally)> {
    Ok(mac_at_depth(acc, w, x, mode.depth()))
}

/// `acc + w*x` at an explicit, already validated iteration depth.
pub(crate) fn mac_at_depth(acc: FxPWord, w: FxPWord, x: FxPWord, depth: u32) -> (FxPWord, Tally) {
    let reg = acc.format().guarded();
    let y = rescale(acc.raw(), acc.format().frac_bits(), reg.frac_bits());
    let st = mac_reg(y, reg, MacOperands::load(w, x, reg.frac_bits()), depth);
    let mut tally = st.tally();
    let (out, sat) = FxPWord::saturating(st.y, reg).0.convert(acc.format());
    tally.saturated(sat);
    (out, tally)
}

/// Serial dot product `acc0 + sum(w[i]*x[i])` in acc0's format. The sum
/// stays in the guard-extended `y` register across the whole fold and is
/// narrowed once at the end.
pub fn dot_acc(
    acc0: FxPWord,
    w: &[FxPWord],
    x: &[FxPWord],
    mode: MacMode,
) -> Result<(FxPWord, Tally)> {
    if w.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: x.len(),
        });
    }
    if w.is_empty() {
        return Err(Error::Empty("dot"));
    }
    let reg = acc0.format().guarded();
    let fi = reg.frac_bits();
    let depth = mode.depth();
    let mut y = rescale(acc0.raw(), acc0.format().frac_bits(), fi);
    let mut tally = Tally::default();
    for (&wi, &xi) in w.iter().zip(x) {
        let st = mac_reg(y, reg, MacOperands::load(wi, xi, fi), depth);
        y = st.y;
        tally += st.tally();
    }
    let (out, sat) = FxPWord::saturating(y, reg).0.convert(acc0.format());
    tally.saturated(sat);
    Ok((out, tally))
}

/// Serial dot product starting from zero, result in `out`.
pub fn dot(
    w: &[FxPWord],
    x: &[FxPWord],
    out: FxPFormat,
    mode: MacMode,
) -> Result<(FxPWord, Tally)> {
    dot_acc(FxPWord::zero(out), w, x, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::quantize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fmt(w: u32, f: u32) -> FxPFormat {
        FxPFormat::new(w, f).unwrap()
    }

    fn q(v: f64, f: FxPFormat) -> FxPWord {
        quantize(v, f).unwrap()
    }

    #[test]
    fn depth_table() {
        assert_eq!(iterations_for(MacKind::Accurate, fmt(8, 4)), 8);
        assert_eq!(iterations_for(MacKind::Approximate, fmt(8, 4)), 6);
        assert_eq!(iterations_for(MacKind::Approximate, fmt(16, 4)), 11);
        assert_eq!(iterations_for(MacKind::Accurate, fmt(16, 4)), 16);
        let m = MacMode::defaults(MacKind::Approximate, 16);
        assert_eq!(m.cycle_reduction(), 0.3125);
        for width in [8, 16] {
            let r = MacMode::defaults(MacKind::Approximate, width).cycle_reduction();
            assert!((0.25..=0.375).contains(&r));
        }
    }

    #[test]
    fn mode_validation() {
        assert!(MacMode::new(MacKind::Accurate, 12, 8).is_ok());
        assert!(MacMode::new(MacKind::Accurate, 12, 12).is_err());
        assert!(MacMode::new(MacKind::Accurate, 1, 0).is_err());
        assert!(MacMode::new(MacKind::Accurate, 60, 8).is_err());
        let m = MacMode::with_accurate_depth(MacKind::Accurate, 4).unwrap();
        assert_eq!((m.depth_accurate, m.depth_approx), (4, 3));
        let m = MacMode::with_accurate_depth(MacKind::Accurate, 2).unwrap();
        assert_eq!(m.depth_approx, 1);
    }

    #[test]
    fn mac_examples() {
        let f = fmt(16, 12);
        let acc = MacMode::defaults(MacKind::Accurate, 16);
        let (y, t) = mac(q(0.0, f), q(3.3, f), q(0.0, f), acc).unwrap();
        assert_eq!(y.raw(), 0);
        assert_eq!(t.cycles, 16);

        let (y, _) = mac(q(0.5, f), q(1.0, f), q(0.25, f), acc).unwrap();
        assert_eq!(y.to_f64(), 0.75);

        let oracle = 0.8125 * 0.6875;
        let (y, _) = mac(q(0.0, f), q(0.8125, f), q(0.6875, f), acc).unwrap();
        assert!((y.to_f64() - oracle).abs() <= f.ulp());
        let approx = acc.with_kind(MacKind::Approximate);
        let (y, t) = mac(q(0.0, f), q(0.8125, f), q(0.6875, f), approx).unwrap();
        assert_eq!(t.cycles, 11);
        let bound = 0.8125 * (-10f64).exp2() + 12.0 * (-16f64).exp2() + 0.5 * f.ulp();
        assert!((y.to_f64() - oracle).abs() <= bound);
    }

    #[test]
    fn mac_range_reduces_large_activations() {
        let f = fmt(16, 8);
        let mode = MacMode::defaults(MacKind::Accurate, 16);
        for &(w, x) in &[(0.75, 37.5), (-1.25, -100.0), (0.01, 127.0), (2.0, 2.0)] {
            let (wq, xq) = (q(w, f), q(x, f));
            let (y, t) = mac(q(0.0, f), wq, xq, mode).unwrap();
            assert_eq!(t.cycles, 16);
            let (w, x) = (wq.to_f64(), xq.to_f64());
            let k = (x.abs() / 2.0).log2().floor().max(0.0) + 1.0;
            let bound = w.abs() * k.exp2() * (-15f64).exp2() + 17.0 * (-12f64).exp2() + f.ulp();
            assert!(
                (y.to_f64() - w * x).abs() <= bound,
                "{w}*{x} -> {}",
                y.to_f64()
            );
        }
    }

    #[test]
    fn mac_saturates_silently() {
        let f = fmt(8, 4);
        let mode = MacMode::defaults(MacKind::Accurate, 8);
        let (y, t) = mac(q(7.0, f), q(7.0, f), q(7.0, f), mode).unwrap();
        assert_eq!(y.raw(), 127);
        assert!(t.saturations > 0);
    }

    #[test]
    fn dot_examples() {
        let f = fmt(16, 12);
        let mode = MacMode::defaults(MacKind::Accurate, 16);
        let w = vec![q(1.0, f); 3];
        let x = vec![q(0.25, f); 3];
        let (y, t) = dot(&w, &x, f, mode).unwrap();
        assert_eq!(y.to_f64(), 0.75);
        assert_eq!(t.cycles, 48);

        let f8 = fmt(8, 5);
        let mode8 = MacMode::defaults(MacKind::Accurate, 8);
        for len in [1usize, 7, 32, 33] {
            let w = vec![q(0.5, f8); len];
            let x = vec![q(0.125, f8); len];
            let (_, t) = dot(&w, &x, f8, mode8).unwrap();
            assert_eq!(t.cycles, 8 * len as u64);
        }
    }

    #[test]
    fn dot_errors() {
        let f = fmt(16, 12);
        let mode = MacMode::defaults(MacKind::Accurate, 16);
        assert!(matches!(
            dot(&[q(1.0, f)], &[], f, mode),
            Err(Error::LengthMismatch { left: 1, right: 0 })
        ));
        assert!(matches!(dot(&[], &[], f, mode), Err(Error::Empty(_))));
    }

    fn per_mac_bound(w: f64, n: u32, fi: u32) -> f64 {
        w.abs() * (1.0 - n as f64).exp2() + (n + 1) as f64 * (-(fi as f64)).exp2()
    }

    #[test]
    fn dot_matches_double_oracle() {
        let wf = fmt(16, 14);
        let xf = fmt(16, 14);
        let out = fmt(16, 11);
        let mode = MacMode::defaults(MacKind::Accurate, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let w: Vec<_> = (0..32).map(|_| q(rng.gen_range(-1.0..1.0), wf)).collect();
            let x: Vec<_> = (0..32).map(|_| q(rng.gen_range(-1.0..1.0), xf)).collect();
            let oracle: f64 = w.iter().zip(&x).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
            let (y, _) = dot(&w, &x, out, mode).unwrap();
            let bound: f64 = w
                .iter()
                .map(|a| per_mac_bound(a.to_f64(), 16, 15))
                .sum::<f64>()
                + 0.5 * out.ulp();
            assert!((y.to_f64() - oracle).abs() <= bound);
        }
    }

    #[test]
    fn approximate_error_dominates_accurate() {
        let f = fmt(16, 12);
        let out = fmt(16, 10);
        let acc = MacMode::defaults(MacKind::Accurate, 16);
        let apx = acc.with_kind(MacKind::Approximate);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut worst_acc, mut worst_apx) = (0.0f64, 0.0f64);
        for _ in 0..1000 {
            let w: Vec<_> = (0..16).map(|_| q(rng.gen_range(-2.0..2.0), f)).collect();
            let x: Vec<_> = (0..16).map(|_| q(rng.gen_range(-2.0..2.0), f)).collect();
            let oracle: f64 = w.iter().zip(&x).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
            worst_acc = worst_acc.max((dot(&w, &x, out, acc).unwrap().0.to_f64() - oracle).abs());
            worst_apx = worst_apx.max((dot(&w, &x, out, apx).unwrap().0.to_f64() - oracle).abs());
        }
        assert!(worst_apx >= worst_acc, "{worst_apx} < {worst_acc}");
    }
}
