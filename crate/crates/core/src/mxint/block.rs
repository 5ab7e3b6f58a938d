use super::rounding::{clamp_signed, rescale_floor, rescale_rne, Scaled};
use crate::config::MAX_MANTISSA_BITS;
use crate::error::{Error, Result};

/// Exponent width used when none is given explicitly.
pub const DEFAULT_EXPONENT_BITS: u32 = 8;

/// Range of the shared exponent for a given exponent width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentRange {
    pub min: i32,
    pub max: i32,
}

impl ExponentRange {
    pub fn for_bits(exponent_bits: u32) -> Self {
        let max = (1i32 << (exponent_bits - 1)) - 1;
        Self { min: -max, max }
    }
}

impl Default for ExponentRange {
    fn default() -> Self {
        Self::for_bits(DEFAULT_EXPONENT_BITS)
    }
}

/// One shared exponent plus `B` signed `m`-bit integer mantissas.
///
/// Element `i` is `mantissas[i] * 2^exponent`. An all-zero block carries the
/// minimum exponent of its range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MxIntBlock {
    exponent: i32,
    mantissas: Vec<i32>,
    mantissa_bits: u32,
}

impl MxIntBlock {
    /// Builds a block from raw parts, checking the mantissa range.
    pub fn new(exponent: i32, mantissas: Vec<i32>, mantissa_bits: u32) -> Result<Self> {
        if !(2..=MAX_MANTISSA_BITS).contains(&mantissa_bits) {
            return Err(Error::Config(format!(
                "mantissa width {mantissa_bits} outside 2..={MAX_MANTISSA_BITS}"
            )));
        }
        if mantissas.is_empty() {
            return Err(Error::Empty("block has no elements".into()));
        }
        let lo = -(1i32 << (mantissa_bits - 1));
        let hi = (1i32 << (mantissa_bits - 1)) - 1;
        if let Some(i) = mantissas.iter().position(|m| !(lo..=hi).contains(m)) {
            return Err(Error::Domain(format!(
                "mantissa {} at index {i} does not fit {mantissa_bits} bits",
                mantissas[i]
            )));
        }
        Ok(Self {
            exponent,
            mantissas,
            mantissa_bits,
        })
    }

    pub fn zero(len: usize, mantissa_bits: u32, range: ExponentRange) -> Self {
        Self {
            exponent: range.min,
            mantissas: vec![0; len],
            mantissa_bits,
        }
    }

    /// Quantizes real values with the default 8-bit exponent range.
    pub fn quantize(values: &[f64], mantissa_bits: u32) -> Result<Self> {
        Self::quantize_in(values, mantissa_bits, ExponentRange::default())
    }

    pub fn quantize_in(values: &[f64], mantissa_bits: u32, range: ExponentRange) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let exact: Vec<Scaled> = values.iter().map(|&v| Scaled::from_f64(v)).collect();
        Self::from_exact(&exact, mantissa_bits, range)
    }

    /// Rounds exact dyadic values onto a shared-exponent grid.
    ///
    /// The exponent is `floor(log2(max |v|)) - (m - 2)`, which puts the largest
    /// magnitude in `[2^(m-2), 2^(m-1))`; mantissas round to nearest even and
    /// saturate. When the block also fits one exponent lower, with only a
    /// negative maximum no further than one step below `-2^(m-1)`, the lower
    /// exponent is used. Re-quantizing a dequantized block then reproduces it
    /// exactly.
    pub fn from_exact(values: &[Scaled], mantissa_bits: u32, range: ExponentRange) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("cannot quantize an empty block".into()));
        }
        let exponent = match shared_exponent(values, mantissa_bits) {
            None => return Ok(Self::zero(values.len(), mantissa_bits, range)),
            Some(e) if e > range.min as i64 && fits_one_lower(values, e - 1, mantissa_bits)? => {
                e - 1
            }
            Some(e) => e,
        };
        let exponent = if exponent > range.max as i64 {
            return Err(Error::ExponentOverflow {
                exponent,
                min: range.min,
                max: range.max,
            });
        } else {
            exponent.max(range.min as i64) as i32
        };
        let mut mantissas = Vec::with_capacity(values.len());
        for v in values {
            let m = rescale_rne(v.mantissa, v.exponent, exponent)?;
            mantissas.push(clamp_signed(m, mantissa_bits) as i32);
        }
        let block = Self {
            exponent,
            mantissas,
            mantissa_bits,
        };
        Ok(block.normalized(range))
    }

    /// Resets the exponent of an all-zero block to the range minimum.
    pub(crate) fn normalized(mut self, range: ExponentRange) -> Self {
        if self.is_zero() {
            self.exponent = range.min;
        }
        self
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn mantissas(&self) -> &[i32] {
        &self.mantissas
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub fn len(&self) -> usize {
        self.mantissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissas.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.mantissas.iter().all(|&m| m == 0)
    }

    pub fn get(&self, i: usize) -> Scaled {
        Scaled::new(self.mantissas[i] as i128, self.exponent)
    }

    /// `mantissa_i * 2^exponent` for every element.
    pub fn dequantize(&self) -> Vec<f64> {
        let scale = (self.exponent as f64).exp2();
        self.mantissas.iter().map(|&m| m as f64 * scale).collect()
    }

    /// Adds `delta` to the shared exponent, leaving mantissas untouched.
    pub fn with_exponent_offset(&self, delta: i32) -> Self {
        Self {
            exponent: self.exponent + delta,
            ..self.clone()
        }
    }
}

/// `floor(log2(max |v|)) - (m - 2)`, or `None` if every value is zero.
fn shared_exponent(values: &[Scaled], mantissa_bits: u32) -> Option<i64> {
    let top = values.iter().filter_map(|v| v.floor_log2()).max()?;
    Some(top - (mantissa_bits as i64 - 2))
}

/// Whether every value rounds into range on the `2^e` grid, allowing
/// negative values down to `-(2^(m-1) + 1)` to saturate.
fn fits_one_lower(values: &[Scaled], e: i64, mantissa_bits: u32) -> Result<bool> {
    let e = e as i32;
    let hi = (1i128 << (mantissa_bits - 1)) - 1;
    for v in values.iter().filter(|v| !v.is_zero()) {
        let ok = if v.mantissa > 0 {
            rescale_rne(v.mantissa, v.exponent, e)? <= hi
        } else {
            rescale_floor(v.mantissa, v.exponent, e)? >= -hi - 2
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Quantizes one block with the default exponent range.
pub fn quantize_block(values: &[f64], mantissa_bits: u32) -> Result<MxIntBlock> {
    MxIntBlock::quantize(values, mantissa_bits)
}

pub fn dequantize_block(block: &MxIntBlock) -> Vec<f64> {
    block.dequantize()
}
