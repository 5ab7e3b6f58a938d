//! Exact integer rounding and scaling primitives.
//!
//! Every quantity in the datapath is a dyadic rational `mantissa * 2^exponent`,
//! so all rounding here is exact integer arithmetic.

use crate::error::{Error, Result};

/// An exact dyadic value `mantissa * 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scaled {
    pub mantissa: i128,
    pub exponent: i32,
}

impl Scaled {
    pub const ZERO: Scaled = Scaled {
        mantissa: 0,
        exponent: 0,
    };

    pub fn new(mantissa: i128, exponent: i32) -> Self {
        Self { mantissa, exponent }
    }

    /// Exact decomposition of a finite double.
    pub fn from_f64(v: f64) -> Self {
        debug_assert!(v.is_finite());
        if v == 0.0 {
            return Self::ZERO;
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 0 { 1i128 } else { -1 };
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as i128;
        let (mant, exp) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1 << 52), biased - 1075)
        };
        Self::new(sign * mant, exp)
    }

    pub fn to_f64(self) -> f64 {
        // Conversion through f64 can round; callers only use it for reporting.
        self.mantissa as f64 * (self.exponent as f64).exp2()
    }

    pub fn is_zero(self) -> bool {
        self.mantissa == 0
    }

    /// `floor(log2(|value|))`, or `None` for zero.
    pub fn floor_log2(self) -> Option<i64> {
        if self.mantissa == 0 {
            None
        } else {
            Some(bit_length(self.mantissa.unsigned_abs()) as i64 - 1 + self.exponent as i64)
        }
    }
}

/// Number of significant bits of `v` (0 for zero).
pub fn bit_length(v: u128) -> u32 {
    128 - v.leading_zeros()
}

/// Arithmetic right shift (rounds toward negative infinity), saturating the
/// shift amount.
pub fn shift_right_floor(v: i128, s: u32) -> i128 {
    if s >= 127 {
        if v < 0 {
            -1
        } else {
            0
        }
    } else {
        v >> s
    }
}

/// `v / 2^s` rounded to nearest, ties to even.
pub fn shift_right_rne(v: i128, s: u32) -> i128 {
    if s == 0 {
        return v;
    }
    if s >= 126 {
        // |v| < 2^125 in every caller, so |v / 2^s| < 1/2.
        return 0;
    }
    let q = v >> s;
    let r = v - (q << s);
    let half = 1i128 << (s - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Rescale `v * 2^from` to the grid `2^to`, rounding to nearest even when
/// precision is lost.
pub fn rescale_rne(v: i128, from: i32, to: i32) -> Result<i128> {
    if from >= to {
        shift_left_checked(v, (from - to) as u32)
    } else {
        Ok(shift_right_rne(v, (to - from) as u32))
    }
}

/// Rescale with truncation toward negative infinity (hardware right shifter).
pub fn rescale_floor(v: i128, from: i32, to: i32) -> Result<i128> {
    if from >= to {
        shift_left_checked(v, (from - to) as u32)
    } else {
        Ok(shift_right_floor(v, (to - from) as u32))
    }
}

pub fn shift_left_checked(v: i128, s: u32) -> Result<i128> {
    if v == 0 {
        return Ok(0);
    }
    if s + bit_length(v.unsigned_abs()) >= 126 {
        return Err(Error::AccumulatorOverflow {
            block: 0,
            detail: format!("left shift of {v} by {s} exceeds 126 bits"),
        });
    }
    Ok(v << s)
}

/// Integer division rounded to nearest, ties to even. `den` must be positive.
pub fn div_rne(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    let twice = 2 * r;
    if twice > den || (twice == den && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Saturate into the signed `bits`-wide two's-complement range.
pub fn clamp_signed(v: i128, bits: u32) -> i128 {
    let max = (1i128 << (bits - 1)) - 1;
    let min = -(1i128 << (bits - 1));
    v.clamp(min, max)
}
