//! Three-region GELU: identity above `a`, zero below `-a`, and a table
//! lookup in between. The block exponent passes through unchanged.

use super::lut::{LutKind, LutTable};
use crate::error::{Error, Result};
use crate::mxint::rounding::{clamp_signed, rescale_rne};
use crate::mxint::{ExponentRange, MxIntBlock, MxIntTensor};

/// Table index of `v` for a GELU table over `[-a, a)`.
pub(crate) fn gelu_index(v: f64, lut: &LutTable) -> usize {
    let (lo, hi) = lut.domain();
    let n = lut.len();
    let idx = ((v - lo) * n as f64 / (hi - lo)).floor();
    (idx.max(0.0) as usize).min(n - 1)
}

/// Applies GELU to every element of one block.
pub fn gelu_block(x: &MxIntBlock, lut: &LutTable, range: ExponentRange) -> Result<MxIntBlock> {
    if lut.kind() != LutKind::Gelu {
        return Err(Error::Config(format!(
            "GELU needs a gelu table, got {}",
            lut.kind().name()
        )));
    }
    let (neg_a, a) = lut.domain();
    let e = x.exponent();
    let scale = (e as f64).exp2();
    let bits = x.mantissa_bits();
    let mut out = Vec::with_capacity(x.len());
    for &m in x.mantissas() {
        let v = m as f64 * scale;
        let y = if v >= a {
            m
        } else if v <= neg_a {
            0
        } else {
            let entry = lut.entry(gelu_index(v, lut));
            let on_grid = rescale_rne(entry.mantissa, entry.exponent, e)?;
            clamp_signed(on_grid, bits) as i32
        };
        out.push(y);
    }
    Ok(MxIntBlock::new(e, out, bits)?.normalized(range))
}

/// Blockwise GELU over a whole tensor; zero padding stays zero.
pub fn gelu_mxint(x: &MxIntTensor, lut: &LutTable) -> Result<MxIntTensor> {
    let range = x.exponent_range();
    let lane_len = x.lane_len();
    let per_lane = x.blocks_per_lane();
    let bs = x.block_size();
    let blocks = x
        .blocks()
        .iter()
        .enumerate()
        .map(|(bi, b)| {
            let y = gelu_block(b, lut, range)?;
            let start = (bi % per_lane) * bs;
            if start + bs <= lane_len {
                return Ok(y);
            }
            let mut mant = y.mantissas().to_vec();
            for m in mant.iter_mut().skip(lane_len - start) {
                *m = 0;
            }
            Ok(MxIntBlock::new(y.exponent(), mant, y.mantissa_bits())?.normalized(range))
        })
        .collect::<Result<Vec<_>>>()?;
    MxIntTensor::from_blocks(
        x.rows(),
        x.cols(),
        x.axis(),
        bs,
        x.exponent_bits(),
        x.class(),
        blocks,
    )
}
