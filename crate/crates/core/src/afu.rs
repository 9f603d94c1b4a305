//! Time-multiplexed activation-function unit.
//!
//! Every function runs on the shared CORDIC datapath at a fixed latency per
//! kind: when a short path exists (tanh for |x| <= 1, selu for x > 0) it is
//! padded to the long path, so the unit's timing never depends on data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cordic::{
    check_depth, divide_core, exp_core, hyperbolic_core, rom_constant, with_sticky, IterSchedule,
    EXP_REDUCTION_CYCLES,
};
use crate::error::{Error, Result};
use crate::fxp::{rescale, FxPFormat, FxPWord, GUARD_BITS, MAX_INTERNAL_WIDTH};
use crate::mac::mul_reg;
use crate::tally::Tally;

pub const GELU_C: f64 = 0.044715;
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const SELU_LAMBDA: f64 = 1.0507;
pub const SELU_ALPHA: f64 = 1.6733;

/// Adders around the tanh exp path: `1 + e` and `1 - q`.
const TANH_AUX_CYCLES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AfKind {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Gelu,
    Swish,
    Selu,
}

impl AfKind {
    pub const ALL: [AfKind; 7] = [
        AfKind::Relu,
        AfKind::Tanh,
        AfKind::Sigmoid,
        AfKind::Softmax,
        AfKind::Gelu,
        AfKind::Swish,
        AfKind::Selu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AfKind::Relu => "relu",
            AfKind::Tanh => "tanh",
            AfKind::Sigmoid => "sigmoid",
            AfKind::Softmax => "softmax",
            AfKind::Gelu => "gelu",
            AfKind::Swish => "swish",
            AfKind::Selu => "selu",
        }
    }

    /// Double-precision reference for a whole vector.
    pub fn reference(self, v: &[f64]) -> Vec<f64> {
        match self {
            AfKind::Softmax => softmax_ref(v),
            k => v.iter().map(|&x| scalar_ref(k, x)).collect(),
        }
    }
}

impl fmt::Display for AfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AfKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

fn sigmoid_ref(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

fn scalar_ref(kind: AfKind, x: f64) -> f64 {
    match kind {
        AfKind::Relu => x.max(0.0),
        AfKind::Tanh => x.tanh(),
        AfKind::Sigmoid => sigmoid_ref(x),
        AfKind::Gelu => 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh()),
        AfKind::Swish => x * sigmoid_ref(x),
        AfKind::Selu => {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
            }
        }
        AfKind::Softmax => unreachable!("softmax is vector-valued"),
    }
}

fn softmax_ref(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Working register: guard bits below the finer of the two formats and
/// integer room for the larger range plus `extra_int` bits.
fn af_register(input: FxPFormat, out: FxPFormat, extra_int: u32) -> FxPFormat {
    let frac = input.frac_bits().max(out.frac_bits()) + GUARD_BITS;
    let int = input.int_bits().max(out.int_bits()).max(1) as u32 + 2 + extra_int;
    FxPFormat::reg((frac + int + 1).min(MAX_INTERNAL_WIDTH), frac)
}

fn load(x: FxPWord, reg: FxPFormat) -> i64 {
    reg.saturate(rescale(x.raw(), x.format().frac_bits(), reg.frac_bits()))
        .0
}

fn narrow(raw: i64, from_frac: u32, out: FxPFormat, tally: &mut Tally) -> FxPWord {
    let (w, sat) = FxPWord::saturating(rescale(raw, from_frac, out.frac_bits()), out);
    tally.saturated(sat);
    w
}

fn hyp_cycles(depth: u32) -> u64 {
    IterSchedule::hyperbolic(depth)
        .map(|s| s.cycles())
        .unwrap_or(0)
}

/// |tanh(v)| for `v` on register `reg`, clamped to [0, 1]. The result
/// carries the divider's sticky bit, so it sits at `reg.frac + 1`.
fn tanh_mag(v: i64, reg: FxPFormat, depth: u32) -> (i64, Tally) {
    let one = 1i64 << reg.frac_bits();
    let a = v.saturating_abs();
    let (t, tally) = if a <= one {
        let (s, c, t1) = hyperbolic_core(a, reg, depth);
        let (q, rem, t2) = divide_core(s, c, reg, depth).expect("sinh < cosh");
        // idle slots matching the exp path latency
        let pad = Tally::cycles(EXP_REDUCTION_CYCLES + TANH_AUX_CYCLES);
        (with_sticky(q, rem), t1 + t2 + pad)
    } else {
        let (m2, sat) = reg.saturate(a.saturating_mul(-2));
        let (e, mut t1) = exp_core(m2, reg, depth);
        t1.saturated(sat);
        let (q, rem, t2) = divide_core(2 * e, one + e, reg, depth).expect("2e < 1 + e");
        (
            2 * one - with_sticky(q, rem),
            t1 + t2 + Tally::cycles(TANH_AUX_CYCLES),
        )
    };
    (t.clamp(0, 2 * one), tally)
}

fn tanh_signed(v: i64, reg: FxPFormat, depth: u32) -> (i64, Tally) {
    let (m, t) = tanh_mag(v, reg, depth);
    (if v < 0 { -m } else { m }, t)
}

/// `(1 + tanh(v/2)) / 2` for `v` on `reg`. The halving is a reinterpretation
/// of the binary point; the result comes back at `reg.frac + 3`.
fn sigmoid_reg(v: i64, reg: FxPFormat, depth: u32) -> (i64, u32, Tally) {
    let half = FxPFormat::reg(reg.width() + 1, reg.frac_bits() + 1);
    let (t, mut tally) = tanh_signed(v, half, depth);
    tally.cycles += 1;
    (
        (1i64 << (half.frac_bits() + 1)) + t,
        half.frac_bits() + 2,
        tally,
    )
}

/// Bypass: `max(x, 0)` in x's format, one cycle.
pub fn relu(x: FxPWord) -> (FxPWord, Tally) {
    let y = if x.is_negative() {
        FxPWord::zero(x.format())
    } else {
        x
    };
    (y, Tally::cycles(1))
}

/// tanh in `out`. Sign is applied after narrowing, so the result is exactly
/// odd in the raw value.
pub fn tanh_af(x: FxPWord, out: FxPFormat, depth: u32) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    let reg = af_register(x.format(), out, 0);
    let v = load(x, reg);
    let (m, mut tally) = tanh_mag(v, reg, depth);
    let mag = narrow(m, reg.frac_bits() + 1, out, &mut tally);
    Ok((if v < 0 { mag.saturating_neg() } else { mag }, tally))
}

/// Logistic sigmoid via the tanh half-argument identity, in `out`.
pub fn sigmoid_af(x: FxPWord, out: FxPFormat, depth: u32) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    let reg = af_register(x.format(), out, 0);
    let (s, frac, mut tally) = sigmoid_reg(load(x, reg), reg, depth);
    Ok((narrow(s, frac, out, &mut tally), tally))
}

/// Max-subtracted softmax over the whole vector, in `out`.
pub fn softmax_af(v: &[FxPWord], out: FxPFormat, depth: u32) -> Result<(Vec<FxPWord>, Tally)> {
    check_depth(depth)?;
    let first = *v.first().ok_or(Error::Empty("softmax"))?;
    let fmt = first.format();
    if let Some(w) = v.iter().find(|w| w.format() != fmt) {
        return Err(Error::FormatMismatch(fmt, w.format()));
    }
    let n = v.len();
    let reg = af_register(fmt, out, usize::BITS - n.leading_zeros());
    let one = 1i64 << reg.frac_bits();
    let m = v.iter().map(|w| w.raw()).max().unwrap_or(0);
    // max search, one compare per element
    let mut tally = Tally::cycles(n as u64);
    let mut exps = Vec::with_capacity(n);
    for w in v {
        let d = reg
            .saturate(rescale(w.raw() - m, fmt.frac_bits(), reg.frac_bits()))
            .0;
        let (e, t) = exp_core(d, reg, depth);
        tally += t;
        exps.push(e);
    }
    let mut sum = 0i64;
    for &e in &exps {
        let (s, sat) = reg.saturate(sum + e);
        tally.saturated(sat);
        sum = s;
    }
    tally.cycles += n as u64;
    let mut ys = Vec::with_capacity(n);
    for e in exps {
        let (q, rem, t) = divide_core(e, sum, reg, depth).expect("e <= sum, sum >= 1");
        tally += t;
        let q = with_sticky(q, rem).clamp(0, 2 * one);
        ys.push(narrow(q, reg.frac_bits() + 1, out, &mut tally));
    }
    Ok((ys, tally))
}

/// GELU (tanh form), Swish or SELU in `out`.
pub fn derived_af(
    kind: AfKind,
    x: FxPWord,
    out: FxPFormat,
    depth: u32,
) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    let reg = af_register(x.format(), out, 0);
    let f = reg.frac_bits();
    let v = load(x, reg);
    let one = 1i64 << f;
    let mut tally = Tally::default();
    let sat_add = |a: i64, b: i64, tally: &mut Tally| {
        let (s, sat) = reg.saturate(a + b);
        tally.saturated(sat);
        tally.cycles += 1;
        s
    };
    let y = match kind {
        AfKind::Gelu => {
            let (x2, t1) = mul_reg(v, v, f, reg, depth);
            let (x3, t2) = mul_reg(x2, v, f, reg, depth);
            let (c3, t3) = mul_reg(x3, rom_constant(GELU_C, f), f, reg, depth);
            tally += t1 + t2 + t3;
            let inner = sat_add(v, c3, &mut tally);
            let (u, t4) = mul_reg(inner, rom_constant(SQRT_2_OVER_PI, f), f, reg, depth);
            let (t, t5) = tanh_signed(u, reg, depth);
            tally += t4 + t5;
            // (1 + t) at f + 1 is (1 + t)/2 at f + 2
            let h = 2 * one + t;
            tally.cycles += 1;
            let (y, t6) = mul_reg(v, h, f + 2, reg, depth);
            tally += t6;
            y
        }
        AfKind::Swish => {
            let (s, sf, t1) = sigmoid_reg(v, reg, depth);
            let (y, t2) = mul_reg(v, s, sf, reg, depth);
            tally += t1 + t2;
            y
        }
        AfKind::Selu => {
            let exp_latency = hyp_cycles(depth) + EXP_REDUCTION_CYCLES + 1;
            if v > 0 {
                let (y, t) = mul_reg(v, rom_constant(SELU_LAMBDA, f), f, reg, depth);
                tally += t + Tally::cycles(exp_latency);
                y
            } else {
                let (e, t1) = exp_core(v, reg, depth);
                tally += t1;
                let em1 = sat_add(e, -one, &mut tally);
                let la = rom_constant(SELU_LAMBDA * SELU_ALPHA, f);
                let (y, t2) = mul_reg(em1, la, f, reg, depth);
                tally += t2;
                y
            }
        }
        other => {
            return Err(Error::Domain {
                op: "derived_af",
                msg: format!("`{other}` is not a derived activation"),
            })
        }
    };
    Ok((narrow(y, f, out, &mut tally), tally))
}

/// Run `kind` over `data` through the single shared unit: elements queue
/// one at a time and cycles add up serially.
pub fn apply(
    kind: AfKind,
    data: &[FxPWord],
    out: FxPFormat,
    depth: u32,
) -> Result<(Vec<FxPWord>, Tally)> {
    if kind == AfKind::Softmax {
        return softmax_af(data, out, depth);
    }
    let mut tally = Tally::default();
    let mut ys = Vec::with_capacity(data.len());
    for &x in data {
        let (y, t) = match kind {
            AfKind::Relu => {
                let (r, mut t) = relu(x);
                let (y, sat) = r.convert(out);
                t.saturated(sat);
                (y, t)
            }
            AfKind::Tanh => tanh_af(x, out, depth)?,
            AfKind::Sigmoid => sigmoid_af(x, out, depth)?,
            k => derived_af(k, x, out, depth)?,
        };
        tally += t;
        ys.push(y);
    }
    Ok((ys, tally))
}
