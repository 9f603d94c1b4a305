//! Pooling and folded-normalization units that sit between layers.

use serde::{Deserialize, Serialize};

use crate::cordic::{check_depth, divide_core, z_register};
use crate::error::{Error, Result};
use crate::fxp::{rescale, FxPFormat, FxPWord, GUARD_BITS, HEADROOM_BITS, MAX_INTERNAL_WIDTH};
use crate::mac::mac_at_depth;
use crate::tally::Tally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
    /// Mean plus mean absolute deviation of the window.
    Aad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolSpec {
    pub fn new(kind: PoolKind, window: [usize; 2], stride: [usize; 2]) -> Result<Self> {
        if window.contains(&0) || stride.contains(&0) {
            return Err(Error::Config(format!(
                "pool window {window:?} and stride {stride:?} must be positive"
            )));
        }
        Ok(Self {
            kind,
            window,
            stride,
        })
    }

    /// Output map size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [wh, ww] = self.window;
        let [sh, sw] = self.stride;
        if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config(
                "pool window and stride must be positive".into(),
            ));
        }
        if wh > h || ww > w {
            return Err(Error::Config(format!(
                "pool window {wh}x{ww} does not fit a {h}x{w} map"
            )));
        }
        Ok(((h - wh) / sh + 1, (w - ww) / sw + 1))
    }
}

/// Per-channel folded affine `scale*x + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    scale: Vec<FxPWord>,
    shift: Vec<FxPWord>,
}

impl NormSpec {
    pub fn new(scale: Vec<FxPWord>, shift: Vec<FxPWord>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::LengthMismatch {
                left: scale.len(),
                right: shift.len(),
            });
        }
        if scale.is_empty() {
            return Err(Error::Empty("norm"));
        }
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[FxPWord] {
        &self.scale
    }

    pub fn shift(&self) -> &[FxPWord] {
        &self.shift
    }
}

fn sum_register(fmt: FxPFormat, n: usize) -> FxPFormat {
    let extra = usize::BITS - n.leading_zeros();
    let frac = fmt.frac_bits() + GUARD_BITS;
    FxPFormat::reg(
        (fmt.width() + GUARD_BITS + HEADROOM_BITS + extra).min(MAX_INTERNAL_WIDTH),
        frac,
    )
}

/// `sum / n` on register `reg`. Power-of-two counts shift (one cycle);
/// others go through the vectoring divider with the divisor scaled by
/// 2^k so the quotient stays below one, k being the integer bits of the
/// source format. The 2^k comes back as a binary-point move.
fn mean_reg(sum: i64, n: usize, reg: FxPFormat, int_bits: u32, depth: u32) -> (i64, Tally) {
    let f = reg.frac_bits();
    if n.is_power_of_two() {
        let k = n.trailing_zeros();
        return (rescale(sum, f + k, f), Tally::cycles(1));
    }
    let k = int_bits + 1;
    let zf = f + k;
    let divisor = (n as i64) << (f + k);
    let (q, _, tally) = divide_core(sum, divisor, z_register(zf), depth).expect("|mean| < 2^k");
    // q at zf fraction bits read at f is q * 2^k
    (q.clamp(reg.min_raw(), reg.max_raw()), tally)
}

/// Iterations of the pooling divider: enough for half an output ulp once
/// the quotient's 2^k scaling is undone.
pub fn pool_divider_depth(fmt: FxPFormat) -> u32 {
    fmt.width() + 3
}

/// Reduce one window to a single value in the window's format.
pub fn pool(window: &[FxPWord], kind: PoolKind) -> Result<(FxPWord, Tally)> {
    let first = *window.first().ok_or(Error::Empty("pool"))?;
    let fmt = first.format();
    if let Some(w) = window.iter().find(|w| w.format() != fmt) {
        return Err(Error::FormatMismatch(fmt, w.format()));
    }
    let n = window.len();
    if kind == PoolKind::Max {
        let m = window
            .iter()
            .copied()
            .max_by_key(|w| w.raw())
            .unwrap_or(first);
        return Ok((m, Tally::cycles(n as u64)));
    }
    let reg = sum_register(fmt, n);
    let f = reg.frac_bits();
    let int_bits = fmt.int_bits().max(0) as u32;
    let depth = pool_divider_depth(fmt);
    let lifted: Vec<i64> = window
        .iter()
        .map(|w| rescale(w.raw(), fmt.frac_bits(), f))
        .collect();
    // every add in the registers below is one cycle
    let mut tally = Tally::cycles(n as u64);
    let sum: i64 = lifted.iter().sum();
    let (mu, t) = mean_reg(sum, n, reg, int_bits, depth);
    tally += t;
    let y = match kind {
        PoolKind::Avg => mu,
        _ => {
            let dev: i64 = lifted.iter().map(|&v| (v - mu).abs()).sum();
            tally.cycles += 2 * n as u64;
            let (d, t) = mean_reg(dev, n, reg, int_bits + 1, depth);
            tally += t;
            tally.cycles += 1;
            mu + d
        }
    };
    let (out, sat) = FxPWord::saturating(rescale(y, f, fmt.frac_bits()), fmt);
    tally.saturated(sat);
    Ok((out, tally))
}

/// `y[i] = scale[i]*x[i] + shift[i]`, each a linear-rotation MAC at `depth`;
/// results in `out`.
pub fn normalize(
    x: &[FxPWord],
    spec: &NormSpec,
    out: FxPFormat,
    depth: u32,
) -> Result<(Vec<FxPWord>, Tally)> {
    normalize_map(x, 1, spec, out, depth)
}

/// Channel-major map of `channels * hw` values; every channel shares one
/// scale/shift pair.
pub fn normalize_map(
    x: &[FxPWord],
    hw: usize,
    spec: &NormSpec,
    out: FxPFormat,
    depth: u32,
) -> Result<(Vec<FxPWord>, Tally)> {
    check_depth(depth)?;
    if x.len() != spec.channels() * hw {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: spec.channels() * hw,
        });
    }
    let mut tally = Tally::default();
    let mut ys = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        let c = i / hw.max(1);
        let (acc, sat) = spec.shift[c].convert(out);
        tally.saturated(sat);
        let (y, t) = mac_at_depth(acc, spec.scale[c], xi, depth);
        tally += t;
        ys.push(y);
    }
    Ok((ys, tally))
}

/// Slide `spec` over a channel-major `c x h x w` map.
pub fn pool_map(
    x: &[FxPWord],
    shape: [usize; 3],
    spec: &PoolSpec,
) -> Result<(Vec<FxPWord>, [usize; 3], Tally)> {
    let [c, h, w] = shape;
    if x.len() != c * h * w {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: c * h * w,
        });
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    let [wh, ww] = spec.window;
    let [sh, sw] = spec.stride;
    let mut tally = Tally::default();
    let mut ys = Vec::with_capacity(c * oh * ow);
    let mut buf = Vec::with_capacity(wh * ww);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                buf.clear();
                for dy in 0..wh {
                    let row = base + (oy * sh + dy) * w + ox * sw;
                    buf.extend_from_slice(&x[row..row + ww]);
                }
                let (y, t) = pool(&buf, spec.kind)?;
                tally += t;
                ys.push(y);
            }
        }
    }
    Ok((ys, [c, oh, ow], tally))
}
