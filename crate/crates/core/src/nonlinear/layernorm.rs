//! Integer-only LayerNorm.
//!
//! After aligning a row to its largest exponent every value is
//! `lambda * x_m`, and with epsilon taken as zero `lambda` cancels between
//! the centered numerator and the standard deviation. Only the mantissas
//! enter the mean, the variance and the `1/sqrt` lookup.

use super::lut::{LutKind, LutTable};
use crate::config::{QuantConfig, TensorClass};
use crate::error::{Error, Result};
use crate::linear::Accumulator;
use crate::mxint::rounding::{div_rne, Scaled};
use crate::mxint::{
    align_blocks_valid, to_minifloat, BlockAxis, MiniFloat, MxIntBlock, MxIntTensor,
};

/// Looks up `1/sqrt(m' * 2^e')`.
///
/// Even exponents read the upper half of the table with `m'`; odd exponents
/// read the lower half with `m'/2` and use `(e'+1)/2` as the shift. The
/// result is the raw entry at exponent `-(shift) - frac_bits`.
pub fn inv_sqrt(mf: MiniFloat, lut: &LutTable) -> Result<Scaled> {
    if lut.kind() != LutKind::InvSqrt {
        return Err(Error::Config(format!(
            "inv_sqrt needs an inv_sqrt table, got {}",
            lut.kind().name()
        )));
    }
    if mf.mantissa < 1 << mf.frac_bits || mf.mantissa >= 2 << mf.frac_bits {
        return Err(Error::Domain(format!(
            "inv_sqrt input mantissa {} is not normalized to {} fractional bits",
            mf.mantissa, mf.frac_bits
        )));
    }
    let addr_bits = lut.index_bits() - 1;
    let frac = mf.mantissa - (1 << mf.frac_bits);
    let addr = if mf.frac_bits >= addr_bits {
        frac >> (mf.frac_bits - addr_bits)
    } else {
        frac << (addr_bits - mf.frac_bits)
    } as usize;
    let half = 1usize << addr_bits;
    let (index, shift) = if mf.exponent.rem_euclid(2) == 0 {
        (half + addr, mf.exponent / 2)
    } else {
        (addr, (mf.exponent + 1) / 2)
    };
    let entry = lut.entry(index);
    Ok(Scaled::new(entry.mantissa, entry.exponent - shift))
}

/// Per-feature scale and shift, quantized with the weight class.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: MxIntTensor,
    pub beta: MxIntTensor,
}

impl LayerNormParams {
    pub fn quantize(gamma: &[f64], beta: &[f64], cfg: &QuantConfig) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::Shape(format!(
                "gamma has {} features, beta {}",
                gamma.len(),
                beta.len()
            )));
        }
        let n = gamma.len();
        Ok(Self {
            gamma: MxIntTensor::quantize(gamma, 1, n, BlockAxis::Dim1, cfg, TensorClass::Weight)?,
            beta: MxIntTensor::quantize(beta, 1, n, BlockAxis::Dim1, cfg, TensorClass::Weight)?,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }
}

/// Normalizes one row of blocks, returning exact pre-rounding outputs.
pub fn layernorm_row(
    row: &[MxIntBlock],
    len: usize,
    params: &LayerNormParams,
    lut: &LutTable,
    cfg: &QuantConfig,
) -> Result<Vec<Scaled>> {
    if len < 2 {
        return Err(Error::Shape(format!(
            "LayerNorm row needs at least 2 elements, got {len}"
        )));
    }
    if params.features() != len {
        return Err(Error::Shape(format!(
            "LayerNorm over {len} features with parameters for {}",
            params.features()
        )));
    }
    let aligned = align_blocks_valid(row, len);
    let n = len as i128;
    let sum: i128 = aligned.mantissas.iter().map(|&m| m as i128).sum();
    let mean = div_rne(sum, n);
    let centered: Vec<i128> = aligned
        .mantissas
        .iter()
        .map(|&m| m as i128 - mean)
        .collect();
    let var = div_rne(centered.iter().map(|d| d * d).sum(), n);

    let width = cfg.accumulator_width();
    if var == 0 {
        return (0..len).map(|c| Ok(params.beta.get(0, c))).collect();
    }
    let mf = to_minifloat(var, 0, lut.index_bits() - 1)?;
    let inv = inv_sqrt(mf, lut)?;
    centered
        .iter()
        .enumerate()
        .map(|(c, &d)| {
            let g = params.gamma.get(0, c);
            let scaled = Scaled::new(d * inv.mantissa * g.mantissa, inv.exponent + g.exponent);
            Ok(Accumulator::sum(&[scaled, params.beta.get(0, c)], width, c)?.scaled())
        })
        .collect()
}

/// Row-wise LayerNorm of a row-blocked tensor, re-quantized to activations.
pub fn layernorm_mxint(
    x: &MxIntTensor,
    params: &LayerNormParams,
    lut: &LutTable,
    cfg: &QuantConfig,
) -> Result<MxIntTensor> {
    if x.axis() != BlockAxis::Dim1 {
        return Err(Error::Shape(
            "LayerNorm input must be blocked along rows".into(),
        ));
    }
    let cols = x.cols();
    let mut values = Vec::with_capacity(x.rows() * cols);
    for r in 0..x.rows() {
        values.extend(layernorm_row(x.lane(r), cols, params, lut, cfg)?);
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
