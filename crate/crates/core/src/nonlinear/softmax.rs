//! Softmax without max subtraction.
//!
//! `e^x = 2^(x log2 e) = 2^n * 2^r` with an integer `n` and `r ∈ [0, 1)`.
//! The fractional part indexes a small `2^r` table and `n` only moves the
//! exponent, so every exponential is a (mantissa, exponent) pair that the
//! accumulator can sum directly.

use super::lut::{LutKind, LutTable};
use crate::config::{ceil_log2, NonlinearConfig, QuantConfig, TensorClass};
use crate::error::{Error, Result};
use crate::linear::Accumulator;
use crate::mxint::rounding::{bit_length, div_rne, rescale_rne, shift_left_checked, Scaled};
use crate::mxint::{align_blocks_valid, BlockAxis, MxIntBlock, MxIntTensor};

/// Integer part and table index of `x * log2(e)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpParts {
    pub n: i64,
    pub r_index: usize,
}

/// `log2(e)` with `frac_bits` fractional bits.
pub fn log2e_fixed(frac_bits: u32) -> i128 {
    (std::f64::consts::LOG2_E * (frac_bits as f64).exp2()).round_ties_even() as i128
}

/// Splits `x * log2(e)` into `n = floor(t)` and the top `r_bits` of `t - n`.
///
/// `t` is held with `frac_bits` fractional bits. `n` saturates to
/// `±(2^n_bits - 1)`.
pub fn exp_decompose(x: Scaled, r_bits: u32, frac_bits: u32, n_bits: u32) -> Result<ExpParts> {
    if r_bits > frac_bits {
        return Err(Error::Config(format!(
            "r_bits = {r_bits} exceeds the {frac_bits} fractional bits of t"
        )));
    }
    let l = log2e_fixed(frac_bits);
    let f = frac_bits as i32;
    let t = rescale_rne(x.mantissa * l, x.exponent - f, -f)?;
    let n = t >> frac_bits;
    let r = t - (n << frac_bits);
    let limit = (1i128 << n_bits) - 1;
    Ok(ExpParts {
        n: n.clamp(-limit, limit) as i64,
        r_index: (r >> (frac_bits - r_bits)) as usize,
    })
}

/// `2^n * 2^(r_index / 2^r_bits)` as an exact table product.
pub fn exp_term(parts: ExpParts, lut: &LutTable) -> Scaled {
    let e = lut.entry(parts.r_index);
    Scaled::new(e.mantissa, e.exponent + parts.n as i32)
}

/// `num / den` with the quotient mantissa normalized to `[1, 2)` and
/// rounded to `out_bits` fractional bits. The sign follows the operands.
pub fn mxint_divide(num: Scaled, den: Scaled, out_bits: u32) -> Result<Scaled> {
    if den.is_zero() {
        return Err(Error::DivideByZero);
    }
    if num.is_zero() {
        return Ok(Scaled::ZERO);
    }
    if out_bits > 60 {
        return Err(Error::Config(format!(
            "{out_bits} quotient bits do not fit 64 bits"
        )));
    }
    let negative = (num.mantissa < 0) != (den.mantissa < 0);
    let a = num.mantissa.unsigned_abs() as i128;
    let b = den.mantissa.unsigned_abs() as i128;
    // Choose `shift` so that a * 2^shift / b lands in [2^out_bits, 2^(out_bits+1)).
    let mut shift = out_bits as i32 + bit_length(b as u128) as i32 - bit_length(a as u128) as i32;
    let scaled_num = |s: i32| -> Result<(i128, i128)> {
        if s >= 0 {
            Ok((shift_left_checked(a, s as u32)?, b))
        } else {
            Ok((a, shift_left_checked(b, (-s) as u32)?))
        }
    };
    let (n0, d0) = scaled_num(shift)?;
    if n0 < d0 << out_bits {
        shift += 1;
    }
    let (n1, d1) = scaled_num(shift)?;
    let mut q = div_rne(n1, d1);
    let mut exponent = num.exponent - den.exponent - shift;
    if q == 1i128 << (out_bits + 1) {
        q >>= 1;
        exponent += 1;
    }
    Ok(Scaled::new(if negative { -q } else { q }, exponent))
}

/// Normalizes a row of exponentials: `y_i = e_i / sum(e)`.
pub fn softmax_from_terms(terms: &[Scaled], width: u32, out_bits: u32) -> Result<Vec<Scaled>> {
    if terms.is_empty() {
        return Err(Error::Empty("softmax row".into()));
    }
    let den = Accumulator::sum(terms, width, 0)?.scaled();
    terms
        .iter()
        .map(|&t| mxint_divide(t, den, out_bits))
        .collect()
}

/// Accumulator width of one softmax row.
pub fn softmax_width(len: usize, cfg: &QuantConfig) -> u32 {
    (cfg.accumulator_mantissa_bits + ceil_log2(len)).min(62)
}

/// Softmax of one row of blocks holding `len` valid elements; exact
/// quotients before output rounding.
pub fn softmax_row(
    row: &[MxIntBlock],
    len: usize,
    lut: &LutTable,
    cfg: &QuantConfig,
    nl: &NonlinearConfig,
) -> Result<Vec<Scaled>> {
    if lut.kind() != LutKind::Pow2 {
        return Err(Error::Config(format!(
            "softmax needs a pow2 table, got {}",
            lut.kind().name()
        )));
    }
    if len == 0 || row.is_empty() {
        return Err(Error::Empty("softmax row".into()));
    }
    let aligned = align_blocks_valid(row, len);
    let e = aligned.common_exponent;
    let r_bits = lut.index_bits();
    let frac_bits = nl.exp_frac_bits(cfg).max(r_bits);
    let n_bits = cfg.activation_mantissa_bits;
    let terms = aligned
        .mantissas
        .iter()
        .map(|&m| {
            Ok(exp_term(
                exp_decompose(Scaled::new(m as i128, e), r_bits, frac_bits, n_bits)?,
                lut,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    softmax_from_terms(
        &terms,
        softmax_width(len, cfg),
        cfg.activation_mantissa_bits,
    )
}

/// Row-wise softmax of a row-blocked tensor, re-quantized to activations.
pub fn softmax_mxint(
    x: &MxIntTensor,
    lut: &LutTable,
    cfg: &QuantConfig,
    nl: &NonlinearConfig,
) -> Result<MxIntTensor> {
    if x.axis() != BlockAxis::Dim1 {
        return Err(Error::Shape(
            "softmax input must be blocked along rows".into(),
        ));
    }
    let cols = x.cols();
    let mut values = Vec::with_capacity(x.rows() * cols);
    for r in 0..x.rows() {
        values.extend(softmax_row(x.lane(r), cols, lut, cfg, nl)?);
    }
    MxIntTensor::from_fn(
        x.rows(),
        cols,
        BlockAxis::Dim1,
        cfg,
        TensorClass::Activation,
        |r, c| Ok(values[r * cols + c]),
    )
}
