//! Unified iterative CORDIC datapath.
//!
//! One shift-add triple per cycle on three guard-extended registers
//! (`x`, `y`, `z`). Three modes are used by the engine:
//!
//! | mode                | drives | computes                   |
//! |---------------------|--------|----------------------------|
//! | linear rotation     | z -> 0 | y + x*z (multiply-add)     |
//! | linear vectoring    | y -> 0 | z + y/x (divide)           |
//! | hyperbolic rotation | z -> 0 | sinh z, cosh z             |
//!
//! Directions follow the sign of the driven residual. In the linear modes
//! a residual of exactly zero holds the registers for that cycle
//! (zero-detect), so exact results stay exact; hyperbolic steps always
//! rotate, ties to +1, because every step contributes to the gain.
//! Hyperbolic iterations start at shift 1 and repeat
//! shifts 4, 13 and 40 once; the hyperbolic gain is folded into the
//! initial `x`.

use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::fxp::{rescale, FxPFormat, FxPWord, GUARD_BITS};
use crate::tally::Tally;

/// Largest supported iteration depth.
pub const MAX_DEPTH: u32 = 48;

/// Shift indices executed twice in hyperbolic mode.
pub const HYPERBOLIC_REPEATS: [u32; 3] = [4, 13, 40];

/// Hyperbolic rotation convergence bound.
pub const THETA_MAX: f64 = 1.1182;

/// Fixed cost of exponent range reduction: the `z/ln2` constant multiply,
/// the `k*ln2` subtraction and the final barrel shift.
pub const EXP_REDUCTION_CYCLES: u64 = 3;

// round(2^30 / ln 2)
const INV_LN2_Q30: i64 = 1_549_082_005;

static ATANH_TABLE: LazyLock<[f64; 64]> = LazyLock::new(|| {
    let mut t = [0.0; 64];
    for (i, v) in t.iter_mut().enumerate().skip(1) {
        *v = (-(i as f64)).exp2().atanh();
    }
    t
});

/// Round a real constant onto a register grid (ROM contents).
#[inline]
pub(crate) fn rom_constant(v: f64, frac: u32) -> i64 {
    (v * (frac as f64).exp2()).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CordicMode {
    Linear,
    Hyperbolic,
}

/// The ordered shift amounts a CORDIC run executes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterSchedule {
    mode: CordicMode,
    depth: u32,
    repeats: Vec<u32>,
    steps: Vec<u32>,
}

impl IterSchedule {
    pub fn linear(depth: u32) -> Result<Self> {
        check_depth(depth)?;
        Ok(Self {
            mode: CordicMode::Linear,
            depth,
            repeats: Vec::new(),
            steps: (0..depth).collect(),
        })
    }

    pub fn hyperbolic(depth: u32) -> Result<Self> {
        check_depth(depth)?;
        let repeats: Vec<u32> = HYPERBOLIC_REPEATS
            .iter()
            .copied()
            .filter(|&r| r <= depth)
            .collect();
        let mut steps = Vec::with_capacity((depth as usize) + repeats.len());
        for i in 1..=depth {
            steps.push(i);
            if repeats.contains(&i) {
                steps.push(i);
            }
        }
        Ok(Self {
            mode: CordicMode::Hyperbolic,
            depth,
            repeats,
            steps,
        })
    }

    pub fn mode(&self) -> CordicMode {
        self.mode
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn repeats(&self) -> &[u32] {
        &self.repeats
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    /// Cycles the schedule takes: one per step.
    pub fn cycles(&self) -> u64 {
        self.steps.len() as u64
    }

    /// Magnitude gain of the schedule (1 in linear mode).
    pub fn gain(&self) -> f64 {
        match self.mode {
            CordicMode::Linear => 1.0,
            CordicMode::Hyperbolic => self
                .steps
                .iter()
                .map(|&i| (1.0 - (-2.0 * i as f64).exp2()).sqrt())
                .product(),
        }
    }

    /// Sum of the micro-rotation angles: the largest |z0| the schedule
    /// can absorb.
    pub fn angle_span(&self) -> f64 {
        match self.mode {
            CordicMode::Linear => 2.0 - (1.0 - self.depth as f64).exp2(),
            CordicMode::Hyperbolic => self.steps.iter().map(|&i| ATANH_TABLE[i as usize]).sum(),
        }
    }
}

pub(crate) fn check_depth(depth: u32) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidDepth(format!(
            "{depth} (expected 1..={MAX_DEPTH})"
        )));
    }
    Ok(())
}

/// Micro-architectural CORDIC registers plus the iteration and cycle
/// counters. `x`/`y` share one register format; `z` has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CordicState {
    pub x: i64,
    pub y: i64,
    pub z: i64,
    pub iter: u32,
    pub cycles: u64,
    pub saturations: u64,
    xy_fmt: FxPFormat,
    z_fmt: FxPFormat,
}

impl CordicState {
    pub fn new(x: i64, y: i64, z: i64, xy_fmt: FxPFormat, z_fmt: FxPFormat) -> Self {
        Self {
            x,
            y,
            z,
            iter: 0,
            cycles: 0,
            saturations: 0,
            xy_fmt,
            z_fmt,
        }
    }

    pub fn xy_format(&self) -> FxPFormat {
        self.xy_fmt
    }

    pub fn z_format(&self) -> FxPFormat {
        self.z_fmt
    }

    pub fn tally(&self) -> Tally {
        Tally {
            cycles: self.cycles,
            saturations: self.saturations,
        }
    }

    #[inline]
    fn sat_xy(&mut self, v: i64) -> i64 {
        let (r, s) = self.xy_fmt.saturate(v);
        self.saturations += s as u64;
        r
    }

    #[inline]
    fn sat_z(&mut self, v: i64) -> i64 {
        let (r, s) = self.z_fmt.saturate(v);
        self.saturations += s as u64;
        r
    }

    #[inline]
    fn tick(&mut self) {
        self.iter += 1;
        self.cycles += 1;
    }

    /// `y += d*x*2^-i`, `z -= d*2^-i` with the digit `d` in {-1, 0, +1}:
    /// zero when |z| is below half the step, `sign(z)` otherwise. `x` is
    /// held constant and is not range-checked.
    #[inline]
    pub fn linear_rotation_step(&mut self, shift: u32) {
        let frac = self.z_fmt.frac_bits();
        if self.z == 0 || self.z.abs() < unit_step(frac, shift + 1) {
            self.tick();
            return;
        }
        let dx = round_shift(self.x, shift);
        let dz = unit_step(frac, shift);
        let (y, z) = if self.z >= 0 {
            (self.y + dx, self.z - dz)
        } else {
            (self.y - dx, self.z + dz)
        };
        self.y = self.sat_xy(y);
        self.z = self.sat_z(z);
        self.tick();
    }

    /// `y -= s*x*2^-i`, `z += s*2^-i`, `s` in {-1, 0, +1}: zero when |y| is
    /// below half the step `x*2^-i`, `sign(y)` otherwise.
    #[inline]
    pub fn linear_vectoring_step(&mut self, shift: u32) {
        if self.y == 0 || self.y.abs() < round_shift(self.x, shift + 1) {
            self.tick();
            return;
        }
        let dx = round_shift(self.x, shift);
        let dz = unit_step(self.z_fmt.frac_bits(), shift);
        let (y, z) = if self.y >= 0 {
            (self.y - dx, self.z + dz)
        } else {
            (self.y + dx, self.z - dz)
        };
        self.y = self.sat_xy(y);
        self.z = self.sat_z(z);
        self.tick();
    }

    /// Hyperbolic rotation micro-step with the ROM angle `atanh(2^-i)`.
    /// The cross terms use a rounding shifter (carry-in of the last dropped
    /// bit); with plain truncation the x/y growth amplifies the shift bias
    /// past 16 register ulps near the edge of the domain.
    #[inline]
    pub fn hyperbolic_rotation_step(&mut self, shift: u32, angle: i64) {
        debug_assert!(shift >= 1);
        let dx = round_shift(self.y, shift);
        let dy = round_shift(self.x, shift);
        let (x, y, z) = if self.z >= 0 {
            (self.x + dx, self.y + dy, self.z - angle)
        } else {
            (self.x - dx, self.y - dy, self.z + angle)
        };
        self.x = self.sat_xy(x);
        self.y = self.sat_xy(y);
        self.z = self.sat_z(z);
        self.tick();
    }
}

/// Barrel shift with a carry-in of the last dropped bit.
#[inline]
fn round_shift(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        v
    } else {
        (v + (1 << (shift - 1))) >> shift
    }
}

#[inline]
fn unit_step(frac: u32, shift: u32) -> i64 {
    if shift > frac {
        0
    } else {
        1i64 << (frac - shift)
    }
}

/// Register wide enough for |v| < 4 at `frac` fraction bits.
#[inline]
pub(crate) fn z_register(frac: u32) -> FxPFormat {
    FxPFormat::reg(frac + 3, frac)
}

/// Linear rotation over shifts `0..depth`. The caller guarantees
/// |z| < 2 and a valid depth.
#[inline]
pub(crate) fn rotate_linear(mut st: CordicState, depth: u32) -> CordicState {
    for i in 0..depth {
        st.linear_rotation_step(i);
    }
    st
}

/// Linear vectoring over shifts `0..depth`. The caller guarantees x > 0
/// and |y/x| < 2.
#[inline]
pub(crate) fn vector_linear(mut st: CordicState, depth: u32) -> CordicState {
    for i in 0..depth {
        st.linear_vectoring_step(i);
    }
    st
}

/// Gain-compensated sinh/cosh of a raw angle on register format `fmt`.
/// Runs on |z| and restores the sign of sinh, so the result is exactly
/// odd/even symmetric and sinh(0) is exactly 0. The caller guarantees |z| <= THETA_MAX.
pub(crate) fn hyperbolic_core(z: i64, fmt: FxPFormat, depth: u32) -> (i64, i64, Tally) {
    let sched = IterSchedule::hyperbolic(depth).expect("depth validated by caller");
    let frac = fmt.frac_bits();
    let inv_gain = rom_constant(1.0 / sched.gain(), frac);
    let mut st = CordicState::new(inv_gain, 0, z.abs(), fmt, fmt);
    for &i in sched.steps() {
        st.hyperbolic_rotation_step(i, rom_constant(ATANH_TABLE[i as usize], frac));
    }
    // zero-detect: a zero angle forces sinh to exactly zero
    let sinh = match z.signum() {
        0 => 0,
        -1 => -st.y,
        _ => st.y,
    };
    (sinh, st.x, st.tally())
}

/// `e^z` on register format `fmt` by `z = k*ln2 + r`, `e^r = sinh r + cosh r`,
/// then a shift by `k`. Results beyond the register saturate; right shifts
/// past the register width flush to zero.
pub(crate) fn exp_core(z: i64, fmt: FxPFormat, depth: u32) -> (i64, Tally) {
    let frac = fmt.frac_bits();
    let k = ((z as i128 * INV_LN2_Q30 as i128 + (1i128 << (29 + frac))) >> (30 + frac)) as i64;
    let ln2 = rom_constant(std::f64::consts::LN_2, frac);
    let r = z - k * ln2;
    let (s, c, mut tally) = hyperbolic_core(r, fmt, depth);
    let (er, sat) = fmt.saturate(s + c);
    tally.saturated(sat);
    let e = if k >= 0 {
        let shifted = rescale(er, frac, frac + (k as u32).min(62));
        let (v, sat) = fmt.saturate(shifted);
        tally.saturated(sat);
        v
    } else {
        er >> (-k).min(63)
    };
    tally.cycles += EXP_REDUCTION_CYCLES;
    (e, tally)
}

/// `y0 + x0*z0` in y0's format.
pub fn linear_rotation(
    x0: FxPWord,
    y0: FxPWord,
    z0: FxPWord,
    depth: u32,
) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    let zf = z0.format().frac_bits();
    if z0.raw().unsigned_abs() >= 2u64 << zf {
        return Err(Error::ConvergenceDomain {
            op: "linear_rotation",
            value: z0.to_f64(),
            limit: 2.0,
        });
    }
    let y_fmt = y0.format().guarded();
    let fi = y_fmt.frac_bits();
    let x = rescale(x0.raw(), x0.format().frac_bits(), fi);
    let y = rescale(y0.raw(), y0.format().frac_bits(), fi);
    let z_fmt = z_register(zf + GUARD_BITS);
    let st = rotate_linear(
        CordicState::new(x, y, z0.raw() << GUARD_BITS, y_fmt, z_fmt),
        depth,
    );
    let mut tally = st.tally();
    let (out, sat) = FxPWord::saturating(st.y, y_fmt).0.convert(y0.format());
    tally.saturated(sat);
    Ok((out, tally))
}

/// Quotient `y/x` of two raw values sharing one binary point, produced on
/// register `z_fmt`, with the sign of the final remainder as a sticky bit. The divisor is normalized into [1, 2) by moving the
/// binary point and widened to carry the target precision; that costs no
/// cycles.
pub(crate) fn divide_core(
    y: i64,
    x: i64,
    z_fmt: FxPFormat,
    depth: u32,
) -> Result<(i64, i64, Tally)> {
    if x <= 0 {
        return Err(Error::Domain {
            op: "linear_vectoring",
            msg: format!("divisor raw {x} must be positive"),
        });
    }
    if y.unsigned_abs() >= 2 * x.unsigned_abs() {
        return Err(Error::ConvergenceDomain {
            op: "linear_vectoring",
            value: y as f64 / x as f64,
            limit: 2.0,
        });
    }
    let msb = 63 - x.leading_zeros();
    let lift = z_fmt.frac_bits().saturating_sub(msb);
    let reg_frac = msb + lift;
    if reg_frac + 3 > 62 {
        return Err(Error::Domain {
            op: "linear_vectoring",
            msg: "divisor exceeds the register width".into(),
        });
    }
    let xy_fmt = FxPFormat::reg(reg_frac + 3, reg_frac);
    let st = vector_linear(
        CordicState::new(x << lift, y << lift, 0, xy_fmt, z_fmt),
        depth,
    );
    Ok((st.z, st.y.signum(), st.tally()))
}

/// Quotient with the sticky bit appended one place below its LSB. A later
/// narrowing by two or more bits then never sees a false tie.
#[inline]
pub(crate) fn with_sticky(z: i64, rem_sign: i64) -> i64 {
    2 * z + rem_sign
}

/// `y0 / x0` in y0's format.
pub fn linear_vectoring(x0: FxPWord, y0: FxPWord, depth: u32) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    if x0.raw() <= 0 {
        return Err(Error::Domain {
            op: "linear_vectoring",
            msg: format!("divisor {} must be positive", x0.to_f64()),
        });
    }
    let fx = x0.format().frac_bits();
    let fy = y0.format().frac_bits();
    let f = fx.max(fy);
    let x = x0.raw() << (f - fx);
    let y = y0.raw() << (f - fy);
    if y.unsigned_abs() >= 2 * x.unsigned_abs() {
        return Err(Error::ConvergenceDomain {
            op: "linear_vectoring",
            value: y0.to_f64() / x0.to_f64(),
            limit: 2.0,
        });
    }
    let out_fmt = y0.format().guarded();
    let z_fmt = z_register(out_fmt.frac_bits());
    let (z, rem, mut tally) = divide_core(y, x, z_fmt, depth)?;
    let z = with_sticky(z, rem);
    let z_fmt = FxPFormat::reg(z_fmt.width() + 1, z_fmt.frac_bits() + 1);
    let (out, sat) = FxPWord::saturating(z, z_fmt).0.convert(y0.format());
    tally.saturated(sat);
    Ok((out, tally))
}

/// Register format for hyperbolic work derived from an operand format:
/// guard bits plus at least two integer bits.
fn hyperbolic_register(fmt: FxPFormat) -> FxPFormat {
    let g = fmt.guarded();
    FxPFormat::reg(g.width().max(g.frac_bits() + 3), g.frac_bits())
}

/// Gain-compensated `(sinh z0, cosh z0)` in z0's format.
pub fn hyperbolic_rotation(z0: FxPWord, depth: u32) -> Result<(FxPWord, FxPWord, Tally)> {
    check_depth(depth)?;
    if z0.to_f64().abs() > THETA_MAX {
        return Err(Error::ConvergenceDomain {
            op: "hyperbolic_rotation",
            value: z0.to_f64(),
            limit: THETA_MAX,
        });
    }
    let reg = hyperbolic_register(z0.format());
    let (s, c, mut tally) = hyperbolic_core(z0.raw() << GUARD_BITS, reg, depth);
    let (sinh, s1) = FxPWord::saturating(s, reg).0.convert(z0.format());
    let (cosh, s2) = FxPWord::saturating(c, reg).0.convert(z0.format());
    tally.saturated(s1);
    tally.saturated(s2);
    Ok((sinh, cosh, tally))
}

/// `e^z` in z's format.
pub fn exp_fxp(z: FxPWord, depth: u32) -> Result<(FxPWord, Tally)> {
    check_depth(depth)?;
    let reg = hyperbolic_register(z.format());
    let (e, mut tally) = exp_core(z.raw() << GUARD_BITS, reg, depth);
    let (out, sat) = FxPWord::saturating(e, reg).0.convert(z.format());
    tally.saturated(sat);
    Ok((out, tally))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::quantize;
    use proptest::prelude::*;

    fn q(v: f64, width: u32, frac: u32) -> FxPWord {
        quantize(v, FxPFormat::new(width, frac).unwrap()).unwrap()
    }

    #[test]
    fn schedule_repeats() {
        let s = IterSchedule::hyperbolic(16).unwrap();
        assert_eq!(s.repeats(), &[4, 13]);
        assert_eq!(s.cycles(), 18);
        assert_eq!(s.steps()[..6], [1, 2, 3, 4, 4, 5]);
        let s = IterSchedule::hyperbolic(3).unwrap();
        assert!(s.repeats().is_empty());
        let s = IterSchedule::hyperbolic(41).unwrap();
        assert_eq!(s.repeats(), &[4, 13, 40]);
        assert_eq!(s.cycles(), 44);
        assert_eq!(
            IterSchedule::linear(8).unwrap().steps(),
            &[0, 1, 2, 3, 4, 5, 6, 7]
        );
        assert!(IterSchedule::linear(0).is_err());
        assert!(IterSchedule::linear(MAX_DEPTH + 1).is_err());
    }

    #[test]
    fn hyperbolic_span_matches_theta_max() {
        let s = IterSchedule::hyperbolic(40).unwrap();
        assert!(
            (s.angle_span() - THETA_MAX).abs() < 1e-4,
            "{}",
            s.angle_span()
        );
        // gain of the infinite schedule is about 0.8281
        assert!((s.gain() - 0.828_159_36).abs() < 1e-6, "{}", s.gain());
    }

    #[test]
    fn linear_rotation_examples() {
        let (y, t) = linear_rotation(q(1.0, 16, 12), q(0.0, 16, 12), q(0.0, 16, 12), 8).unwrap();
        assert_eq!(y.raw(), 0);
        assert_eq!(t.cycles, 8);

        let (y, t) = linear_rotation(q(1.0, 16, 12), q(0.25, 16, 12), q(0.5, 16, 12), 16).unwrap();
        assert!((y.to_f64() - 0.75).abs() <= bound(1.0, 16, 12));
        assert_eq!(t.cycles, 16);

        let (y, _) =
            linear_rotation(q(0.8125, 16, 12), q(0.0, 16, 12), q(0.6875, 16, 12), 16).unwrap();
        assert!((y.to_f64() - 0.558_593_75).abs() <= bound(0.8125, 16, 12));
    }

    /// |x0|*2^(1-n) + (n+1)*2^-fi, plus half an output ulp for narrowing.
    fn bound(x0: f64, n: u32, out_frac: u32) -> f64 {
        let fi = out_frac + GUARD_BITS;
        x0.abs() * (1.0 - n as f64).exp2()
            + (n + 1) as f64 * (-(fi as f64)).exp2()
            + 0.5 * (-(out_frac as f64)).exp2()
    }

    #[test]
    fn linear_rotation_domain() {
        let err = linear_rotation(q(1.0, 16, 12), q(0.0, 16, 12), q(2.0, 16, 12), 8).unwrap_err();
        assert!(matches!(err, Error::ConvergenceDomain { .. }));
        assert!(linear_rotation(q(1.0, 16, 12), q(0.0, 16, 12), q(-2.0, 16, 12), 8).is_err());
        assert!(linear_rotation(q(1.0, 16, 12), q(0.0, 16, 12), q(1.999, 16, 12), 8).is_ok());
    }

    #[test]
    fn linear_vectoring_examples() {
        let (z, t) = linear_vectoring(q(1.0, 16, 12), q(0.0, 16, 12), 8).unwrap();
        assert_eq!(z.raw(), 0);
        assert_eq!(t.cycles, 8);

        let (z, _) = linear_vectoring(q(0.5, 16, 12), q(0.5, 16, 12), 16).unwrap();
        assert!(
            (z.to_f64() - 1.0).abs() <= (-15f64).exp2() + 17.0 * (-16f64).exp2() + (-13f64).exp2()
        );

        let (z, _) = linear_vectoring(q(0.75, 16, 12), q(0.3, 16, 12), 16).unwrap();
        let oracle = q(0.3, 16, 12).to_f64() / 0.75;
        assert!(
            (z.to_f64() - oracle).abs()
                <= (-15f64).exp2() + 17.0 * (-16f64).exp2() + (-13f64).exp2()
        );
        assert!((z.to_f64() - 0.4).abs() < 1e-3);
    }

    #[test]
    fn linear_vectoring_errors() {
        assert!(matches!(
            linear_vectoring(q(0.0, 16, 12), q(0.5, 16, 12), 8),
            Err(Error::Domain { .. })
        ));
        assert!(linear_vectoring(q(-1.0, 16, 12), q(0.5, 16, 12), 8).is_err());
        assert!(matches!(
            linear_vectoring(q(0.25, 16, 12), q(0.5, 16, 12), 8),
            Err(Error::ConvergenceDomain { .. })
        ));
    }

    #[test]
    fn hyperbolic_examples() {
        let (s, c, t) = hyperbolic_rotation(q(0.0, 16, 13), 16).unwrap();
        assert_eq!(s.raw(), 0);
        assert!((c.to_f64() - 1.0).abs() <= 4.0 * (-13f64).exp2());
        assert_eq!(t.cycles, 18);

        let (s, c, _) = hyperbolic_rotation(q(1.0, 16, 13), 16).unwrap();
        let ulp = (-13f64).exp2();
        assert!(
            (s.to_f64() - 1f64.sinh()).abs() <= 4.0 * ulp,
            "{}",
            s.to_f64()
        );
        assert!(
            (c.to_f64() - 1f64.cosh()).abs() <= 4.0 * ulp,
            "{}",
            c.to_f64()
        );
    }

    #[test]
    fn hyperbolic_symmetry_is_raw_exact() {
        let fmt = FxPFormat::new(16, 13).unwrap();
        for raw in (0..=9160).step_by(7) {
            let p = FxPWord::from_raw(raw, fmt).unwrap();
            let n = FxPWord::from_raw(-raw, fmt).unwrap();
            let (sp, cp, _) = hyperbolic_rotation(p, 16).unwrap();
            let (sn, cn, _) = hyperbolic_rotation(n, 16).unwrap();
            assert_eq!(sn.raw(), -sp.raw());
            assert_eq!(cn.raw(), cp.raw());
        }
    }

    #[test]
    fn hyperbolic_domain() {
        assert!(matches!(
            hyperbolic_rotation(q(1.2, 16, 13), 16),
            Err(Error::ConvergenceDomain { .. })
        ));
        assert!(hyperbolic_rotation(q(-1.118, 16, 13), 16).is_ok());
    }

    #[test]
    fn hyperbolic_identity_sweep() {
        let fmt = FxPFormat::new(16, 13).unwrap();
        let reg = hyperbolic_register(fmt);
        let eps = 16.0 * reg.ulp();
        let limit = (THETA_MAX / fmt.ulp()) as i64;
        for raw in (-limit..=limit).step_by(3) {
            let (s, c, _) = hyperbolic_core(raw << GUARD_BITS, reg, 20);
            let (s, c) = (s as f64 * reg.ulp(), c as f64 * reg.ulp());
            let id = c * c - s * s;
            assert!((id - 1.0).abs() <= eps, "raw {raw}: {id}");
            assert!(c >= 1.0 - eps);
        }
    }

    #[test]
    fn exp_examples() {
        let (e, t) = exp_fxp(q(0.0, 16, 12), 16).unwrap();
        assert!((e.to_f64() - 1.0).abs() <= 4.0 * (-12f64).exp2());
        assert_eq!(t.cycles, 18 + EXP_REDUCTION_CYCLES);

        let (e, _) = exp_fxp(q(std::f64::consts::LN_2, 16, 12), 16).unwrap();
        assert!(
            (e.to_f64() - 2.0).abs() <= 4.0 * (-12f64).exp2(),
            "{}",
            e.to_f64()
        );

        let (e, _) = exp_fxp(q(-1.0, 16, 12), 16).unwrap();
        assert!((e.to_f64() - 0.367_879_44).abs() <= 4.0 * (-12f64).exp2());
    }

    #[test]
    fn exp_error_sweep_negative_range() {
        let fmt = FxPFormat::new(16, 12).unwrap();
        for raw in (-8 * 4096..=0).step_by(5) {
            let z = FxPWord::from_raw(raw, fmt).unwrap();
            let (e, _) = exp_fxp(z, 16).unwrap();
            let err = (e.to_f64() - z.to_f64().exp()).abs();
            assert!(err <= 4.0 * fmt.ulp(), "z={} err={err}", z.to_f64());
        }
    }

    #[test]
    fn exp_saturates_and_flushes() {
        let (e, t) = exp_fxp(q(7.9, 16, 12), 16).unwrap();
        assert_eq!(e.raw(), i16::MAX as i64);
        assert!(t.saturations > 0);
        let (e, _) = exp_fxp(q(-7.99, 8, 4), 8).unwrap();
        assert_eq!(e.raw(), 0);
    }

    #[test]
    fn linear_residual_envelope() {
        // |z_i| <= 2^(1-i) once step i has run, up to one register ulp per step.
        let z_fmt = z_register(16);
        let xy = FxPFormat::reg(24, 16);
        for z0 in (-(2i64 << 16) + 1..(2i64 << 16)).step_by(97) {
            let mut st = CordicState::new(1 << 16, 0, z0, xy, z_fmt);
            for i in 0..16u32 {
                st.linear_rotation_step(i);
                let env = (1i64 << 16) >> i;
                assert!(st.z.abs() <= env + i as i64 + 1, "z0={z0} i={i} z={}", st.z);
            }
        }
    }

    #[test]
    fn worst_case_error_decreases_with_depth() {
        let fmt = FxPFormat::new(16, 12).unwrap();
        let ulp_int = (-16f64).exp2();
        let x0 = q(0.9, 16, 12);
        let worst = |n: u32| {
            (-8000i64..8000)
                .step_by(13)
                .map(|raw| {
                    let z = FxPWord::from_raw(raw, fmt).unwrap();
                    let (y, _) = linear_rotation(x0, FxPWord::zero(fmt), z, n).unwrap();
                    (y.to_f64() - x0.to_f64() * z.to_f64()).abs()
                })
                .fold(0.0, f64::max)
        };
        for n in 2..14 {
            assert!(worst(n + 2) <= worst(n) + 2.0 * ulp_int, "depth {n}");
        }
    }

    proptest! {
        #[test]
        fn linear_rotation_is_deterministic(x in -2000i64..2000, y in -2000i64..2000, z in -8000i64..8000, n in 1u32..20) {
            let fmt = FxPFormat::new(16, 12).unwrap();
            let a = linear_rotation(FxPWord::from_raw(x, fmt).unwrap(), FxPWord::from_raw(y, fmt).unwrap(), FxPWord::from_raw(z, fmt).unwrap(), n).unwrap();
            let b = linear_rotation(FxPWord::from_raw(x, fmt).unwrap(), FxPWord::from_raw(y, fmt).unwrap(), FxPWord::from_raw(z, fmt).unwrap(), n).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.1.cycles, n as u64);
        }

        #[test]
        fn linear_rotation_within_bound(x in -8000i64..8000, y in -4000i64..4000, z in -8191i64..8191, n in 4u32..20) {
            let fmt = FxPFormat::new(16, 12).unwrap();
            let (x0, y0, z0) = (FxPWord::from_raw(x, fmt).unwrap(), FxPWord::from_raw(y, fmt).unwrap(), FxPWord::from_raw(z, fmt).unwrap());
            let (out, t) = linear_rotation(x0, y0, z0, n).unwrap();
            prop_assume!(t.saturations == 0);
            let exact = y0.to_f64() + x0.to_f64() * z0.to_f64();
            prop_assert!((out.to_f64() - exact).abs() <= bound(x0.to_f64(), n, 12));
        }

        #[test]
        fn vectoring_within_bound(x in 1i64..32000, frac_y in -1.99f64..1.99, n in 4u32..20) {
            let fmt = FxPFormat::new(16, 12).unwrap();
            let x0 = FxPWord::from_raw(x, fmt).unwrap();
            let y0 = quantize(frac_y * x0.to_f64(), fmt).unwrap();
            prop_assume!(y0.to_f64().abs() < 2.0 * x0.to_f64());
            let (zq, t) = linear_vectoring(x0, y0, n).unwrap();
            prop_assert_eq!(t.cycles, n as u64);
            let exact = y0.to_f64() / x0.to_f64();
            let b = (1.0 - n as f64).exp2() + (n + 1) as f64 * (-16f64).exp2() + 0.5 * fmt.ulp();
            prop_assert!((zq.to_f64() - exact).abs() <= b + 1e-12, "{} vs {exact}", zq.to_f64());
        }
    }
}
