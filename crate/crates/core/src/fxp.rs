//! Two's-complement fixed-point words.
//!
//! Every datapath value in the emulator is an [`FxPWord`]: a raw signed
//! integer plus the [`FxPFormat`] that gives it meaning. Engine-boundary
//! formats are 8 or 16 bits wide; the CORDIC datapath uses wider
//! guard-extended formats built with [`FxPFormat::internal`].
//!
//! Rounding rules:
//! - [`quantize`] rounds to nearest, ties to even, then saturates.
//! - [`shift_round`] and the per-iteration CORDIC shifts truncate toward
//!   negative infinity, like an arithmetic shifter.
//! - Narrowing a guard-extended register back to a boundary format
//!   ([`FxPWord::convert`]) rounds half away from zero and saturates, so
//!   narrowing commutes with negation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extra fraction bits carried by every CORDIC register.
pub const GUARD_BITS: u32 = 4;

/// Extra integer bits on guard-extended registers. Non-restoring digit
/// selection can overshoot the final value by up to one partial product.
pub const HEADROOM_BITS: u32 = 2;

/// Widest register the emulator models.
pub const MAX_INTERNAL_WIDTH: u32 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxPFormat {
    width: u32,
    frac: u32,
}

impl FxPFormat {
    /// Engine-boundary format: `width` must be 8 or 16 and `frac < width`.
    pub fn new(width: u32, frac: u32) -> Result<Self> {
        if !matches!(width, 8 | 16) || frac >= width {
            return Err(Error::InvalidFormat { width, frac });
        }
        Ok(Self { width, frac })
    }

    /// Guard-extended register format used inside the datapath.
    pub fn internal(width: u32, frac: u32) -> Result<Self> {
        if !(2..=MAX_INTERNAL_WIDTH).contains(&width) || frac > MAX_INTERNAL_WIDTH {
            return Err(Error::InvalidFormat { width, frac });
        }
        Ok(Self { width, frac })
    }

    pub(crate) const fn reg(width: u32, frac: u32) -> Self {
        debug_assert!(width >= 2 && width <= MAX_INTERNAL_WIDTH);
        Self { width, frac }
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn frac_bits(self) -> u32 {
        self.frac
    }

    /// Integer bits excluding the sign bit. Negative when the format only
    /// covers a sub-unit range.
    pub fn int_bits(self) -> i32 {
        self.width as i32 - 1 - self.frac as i32
    }

    pub fn is_boundary(self) -> bool {
        matches!(self.width, 8 | 16) && self.frac < self.width
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.width - 1))
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.width - 1)) - 1
    }

    pub fn ulp(self) -> f64 {
        (-(self.frac as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.ulp()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.ulp()
    }

    /// Raw encoding of 1.0, or `None` when the format cannot hold it.
    pub fn one_raw(self) -> Option<i64> {
        let one = 1i64.checked_shl(self.frac)?;
        (one <= self.max_raw()).then_some(one)
    }

    /// Clamp `raw` into range, reporting whether it had to.
    #[inline]
    pub fn saturate(self, raw: i64) -> (i64, bool) {
        let (lo, hi) = (self.min_raw(), self.max_raw());
        if raw > hi {
            (hi, true)
        } else if raw < lo {
            (lo, true)
        } else {
            (raw, false)
        }
    }

    /// Register format: `GUARD_BITS` more fraction bits and
    /// `HEADROOM_BITS` more integer bits.
    pub fn guarded(self) -> Self {
        Self::reg(
            (self.width + GUARD_BITS + HEADROOM_BITS).min(MAX_INTERNAL_WIDTH),
            self.frac + GUARD_BITS,
        )
    }

    /// Every word of this format in ascending order. Only sensible for
    /// narrow formats.
    pub fn all_words(self) -> impl Iterator<Item = FxPWord> {
        (self.min_raw()..=self.max_raw()).map(move |raw| FxPWord { raw, format: self })
    }
}

impl fmt::Display for FxPFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fxp{}.{}", self.width, self.frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxPWord {
    raw: i64,
    format: FxPFormat,
}

impl FxPWord {
    /// Wraps a raw value, rejecting anything that does not fit.
    pub fn from_raw(raw: i64, format: FxPFormat) -> Result<Self> {
        if raw < format.min_raw() || raw > format.max_raw() {
            return Err(Error::Domain {
                op: "from_raw",
                msg: format!("raw {raw} does not fit {format}"),
            });
        }
        Ok(Self { raw, format })
    }

    /// Saturating constructor for datapath use.
    #[inline]
    pub fn saturating(raw: i64, format: FxPFormat) -> (Self, bool) {
        let (raw, sat) = format.saturate(raw);
        (Self { raw, format }, sat)
    }

    pub fn zero(format: FxPFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> FxPFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.format.ulp()
    }

    pub fn is_negative(self) -> bool {
        self.raw < 0
    }

    /// Saturating negation; the most negative word maps to the maximum.
    pub fn saturating_neg(self) -> Self {
        Self::saturating(-self.raw, self.format).0
    }

    pub fn saturating_abs(self) -> Self {
        if self.raw < 0 {
            self.saturating_neg()
        } else {
            self
        }
    }

    /// Re-express in another format. Dropped fraction bits round half away
    /// from zero; out-of-range results saturate.
    pub fn convert(self, to: FxPFormat) -> (Self, bool) {
        let raw = rescale(self.raw, self.format.frac, to.frac);
        Self::saturating(raw, to)
    }

    /// Compare values across formats exactly.
    pub fn cmp_value(self, other: Self) -> Ordering {
        let f = self.format.frac.max(other.format.frac);
        let a = (self.raw as i128) << (f - self.format.frac);
        let b = (other.raw as i128) << (f - other.format.frac);
        a.cmp(&b)
    }
}

impl fmt::Display for FxPWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}:{})", self.to_f64(), self.format, self.raw)
    }
}

impl PartialOrd for FxPWord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        (self.format == other.format).then(|| self.raw.cmp(&other.raw))
    }
}

/// Move a raw value between fraction counts: left shifts are exact, right
/// shifts round half away from zero.
#[inline]
pub(crate) fn rescale(raw: i64, from_frac: u32, to_frac: u32) -> i64 {
    match to_frac.cmp(&from_frac) {
        Ordering::Equal => raw,
        Ordering::Greater => {
            let k = to_frac - from_frac;
            if k >= 63 {
                return if raw > 0 {
                    i64::MAX
                } else if raw < 0 {
                    i64::MIN
                } else {
                    0
                };
            }
            raw.checked_shl(k)
                .filter(|v| v >> k == raw)
                .unwrap_or(if raw > 0 { i64::MAX } else { i64::MIN })
        }
        Ordering::Less => {
            let k = from_frac - to_frac;
            if k >= 63 {
                return 0;
            }
            let half = 1i64 << (k - 1);
            let mag = (raw.unsigned_abs() + half as u64) >> k;
            if raw < 0 {
                -(mag as i64)
            } else {
                mag as i64
            }
        }
    }
}

/// Round-to-nearest-even quantizer with saturation.
pub fn quantize(v: f64, fmt: FxPFormat) -> Result<FxPWord> {
    quantize_checked(v, fmt).map(|(w, _)| w)
}

/// [`quantize`] that also reports whether the value saturated.
pub fn quantize_checked(v: f64, fmt: FxPFormat) -> Result<(FxPWord, bool)> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    let scaled = (v * (fmt.frac as f64).exp2()).round_ties_even();
    let (lo, hi) = (fmt.min_raw(), fmt.max_raw());
    if scaled > hi as f64 {
        Ok((
            FxPWord {
                raw: hi,
                format: fmt,
            },
            true,
        ))
    } else if scaled < lo as f64 {
        Ok((
            FxPWord {
                raw: lo,
                format: fmt,
            },
            true,
        ))
    } else {
        Ok((
            FxPWord {
                raw: scaled as i64,
                format: fmt,
            },
            false,
        ))
    }
}

pub fn dequantize(w: FxPWord) -> f64 {
    w.to_f64()
}

pub fn sat_add(a: FxPWord, b: FxPWord) -> Result<FxPWord> {
    sat_add_checked(a, b).map(|(w, _)| w)
}

/// [`sat_add`] that also reports saturation.
pub fn sat_add_checked(a: FxPWord, b: FxPWord) -> Result<(FxPWord, bool)> {
    if a.format != b.format {
        return Err(Error::FormatMismatch(a.format, b.format));
    }
    Ok(FxPWord::saturating(a.raw + b.raw, a.format))
}

pub fn sat_sub(a: FxPWord, b: FxPWord) -> Result<FxPWord> {
    if a.format != b.format {
        return Err(Error::FormatMismatch(a.format, b.format));
    }
    Ok(FxPWord::saturating(a.raw - b.raw, a.format).0)
}

/// Arithmetic right shift by `k`, truncating toward negative infinity.
pub fn shift_round(a: FxPWord, k: u32) -> Result<FxPWord> {
    let limit = a.format.width + GUARD_BITS;
    if k >= limit {
        return Err(Error::ShiftOutOfRange {
            shift: k,
            width: limit,
        });
    }
    Ok(FxPWord {
        raw: a.raw >> k,
        format: a.format,
    })
}
