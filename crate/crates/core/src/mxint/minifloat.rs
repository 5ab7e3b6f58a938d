use super::rounding::{bit_length, shift_left_checked, shift_right_rne};
use crate::error::{Error, Result};

/// A positive normalized value `(mantissa / 2^frac_bits) * 2^exponent` with
/// the mantissa in `[2^frac_bits, 2^(frac_bits+1))`, i.e. `m' ∈ [1, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MiniFloat {
    pub mantissa: u64,
    pub frac_bits: u32,
    pub exponent: i32,
}

impl MiniFloat {
    /// Normalized mantissa as a real number in `[1, 2)`.
    pub fn significand(&self) -> f64 {
        self.mantissa as f64 / (self.frac_bits as f64).exp2()
    }

    pub fn value(&self) -> f64 {
        self.significand() * (self.exponent as f64).exp2()
    }
}

/// Casts a positive wide integer `value * 2^exponent` to a minifloat with
/// `frac_bits` fractional mantissa bits, rounding to nearest even.
pub fn to_minifloat(value: i128, exponent: i32, frac_bits: u32) -> Result<MiniFloat> {
    if value <= 0 {
        return Err(Error::Domain(format!(
            "minifloat conversion needs a positive value, got {value}"
        )));
    }
    if frac_bits > 62 {
        return Err(Error::Config(format!(
            "{frac_bits} fractional bits do not fit 64 bits"
        )));
    }
    let lead = bit_length(value as u128) as i32 - 1;
    let shift = lead - frac_bits as i32;
    let mut mantissa = if shift > 0 {
        shift_right_rne(value, shift as u32)
    } else {
        shift_left_checked(value, (-shift) as u32)?
    };
    let mut exp = lead + exponent;
    if mantissa == 1i128 << (frac_bits + 1) {
        mantissa >>= 1;
        exp += 1;
    }
    Ok(MiniFloat {
        mantissa: mantissa as u64,
        frac_bits,
        exponent: exp,
    })
}
