//! Integer-only MXInt linear algebra.
//!
//! A block dot product multiplies integer mantissas, sums them exactly in an
//! adder tree and adds the two shared exponents once. Partial sums from
//! different blocks meet in an [`Accumulator`] of fixed width, and results are
//! rounded back onto an activation block grid.

use crate::config::{QuantConfig, TensorClass};
use crate::error::{Error, Result};
use crate::mxint::rounding::{bit_length, shift_left_checked, shift_right_floor, Scaled};
use crate::mxint::{BlockAxis, ExponentRange, MxIntBlock, MxIntTensor};

/// A reduction register holding `value * 2^exponent` in `width` signed bits.
///
/// The register never wraps: when a sum needs more than `width` bits its low
/// bits are shifted out and the scale exponent grows, which is where a narrow
/// accumulator loses precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    value: i64,
    exponent: i32,
    width: u32,
}

impl Accumulator {
    /// Sums exact terms.
    ///
    /// All terms are brought onto one grid: the finest grid at which the
    /// largest term still fits `width` bits, but never finer than the
    /// smallest term exponent. Terms below that grid are truncated by an
    /// arithmetic right shift; everything above is exact. The result does
    /// not depend on term order.
    pub fn sum(terms: &[Scaled], width: u32, block: usize) -> Result<Self> {
        assert!((2..=62).contains(&width), "accumulator width {width}");
        let mut min_exp = i32::MAX;
        let mut top = i64::MIN;
        for t in terms {
            min_exp = min_exp.min(t.exponent);
            if t.mantissa != 0 {
                top = top.max(bit_length(t.mantissa.unsigned_abs()) as i64 + t.exponent as i64);
            }
        }
        if terms.is_empty() {
            return Ok(Self::fit(0, 0, width));
        }
        let grid = if top == i64::MIN {
            min_exp
        } else {
            (min_exp as i64).max(top - (width as i64 - 1)) as i32
        };
        let mut total: i128 = 0;
        for t in terms.iter().filter(|t| t.mantissa != 0) {
            let v = if t.exponent >= grid {
                shift_left_checked(t.mantissa, (t.exponent - grid) as u32)
                    .map_err(|e| at_block(e, block))?
            } else {
                shift_right_floor(t.mantissa, (grid - t.exponent) as u32)
            };
            total = total
                .checked_add(v)
                .ok_or_else(|| Error::AccumulatorOverflow {
                    block,
                    detail: "sum exceeds 127 bits".into(),
                })?;
        }
        Ok(Self::fit(total, grid, width))
    }

    /// Shifts `value * 2^exponent` right until it fits `width` bits.
    fn fit(mut value: i128, mut exponent: i32, width: u32) -> Self {
        let limit = 1i128 << (width - 1);
        while value >= limit || value < -limit + 1 {
            let excess = (bit_length(value.unsigned_abs()) - (width - 1)).max(1);
            value = shift_right_floor(value, excess);
            exponent += excess as i32;
        }
        Self {
            value: value as i64,
            exponent,
            width,
        }
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn scaled(&self) -> Scaled {
        Scaled::new(self.value as i128, self.exponent)
    }

    pub fn to_f64(&self) -> f64 {
        self.scaled().to_f64()
    }
}

fn at_block(e: Error, block: usize) -> Error {
    match e {
        Error::AccumulatorOverflow { detail, .. } => Error::AccumulatorOverflow { block, detail },
        other => other,
    }
}

/// A contiguous run of mantissas inside one block, with its block's exponent.
#[derive(Debug, Clone, Copy)]
pub struct BlockSlice<'a> {
    pub exponent: i32,
    pub mantissas: &'a [i32],
}

impl<'a> BlockSlice<'a> {
    pub fn of(block: &'a MxIntBlock, start: usize, len: usize) -> Self {
        Self {
            exponent: block.exponent(),
            mantissas: &block.mantissas()[start..start + len],
        }
    }

    pub fn whole(block: &'a MxIntBlock) -> Self {
        Self::of(block, 0, block.len())
    }
}

/// Integer dot product of two equal-length block slices.
///
/// The products are summed exactly and the sum is placed in the accumulator;
/// the result exponent is one addition, `x_E + w_E`.
pub fn dot_slices(x: BlockSlice<'_>, w: BlockSlice<'_>, width: u32) -> Result<Accumulator> {
    if x.mantissas.len() != w.mantissas.len() {
        return Err(Error::Shape(format!(
            "dot product of lengths {} and {}",
            x.mantissas.len(),
            w.mantissas.len()
        )));
    }
    let sum: i64 = x
        .mantissas
        .iter()
        .zip(w.mantissas)
        .map(|(&a, &b)| a as i64 * b as i64)
        .sum();
    Ok(Accumulator::fit(
        sum as i128,
        x.exponent + w.exponent,
        width,
    ))
}

/// Dot product of an activation block with an equally long weight slice.
pub fn mxint_dot(x: &MxIntBlock, w: BlockSlice<'_>, cfg: &QuantConfig) -> Result<Accumulator> {
    dot_slices(BlockSlice::whole(x), w, cfg.accumulator_width())
}

/// Reduction segments of a `k`-long inner dimension split by both operands'
/// block boundaries: `(start, len)` pairs.
fn segments(k: usize, a_block: usize, b_block: usize) -> Vec<(usize, usize)> {
    let mut cuts: Vec<usize> = (0..k)
        .step_by(a_block)
        .chain((0..k).step_by(b_block))
        .collect();
    cuts.push(k);
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1] - w[0])).collect()
}

/// Exact per-output accumulators of `a · b` (plus optional per-column bias).
fn matmul_accumulators(
    a: &MxIntTensor,
    b: &MxIntTensor,
    bias: Option<&MxIntTensor>,
    cfg: &QuantConfig,
) -> Result<Vec<Accumulator>> {
    if a.axis() != BlockAxis::Dim1 || b.axis() != BlockAxis::Dim0 {
        return Err(Error::Shape(
            "matmul needs the left operand blocked along rows and the right along columns".into(),
        ));
    }
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "inner dimensions differ: [{}, {}] x [{}, {}]",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if let Some(bias) = bias {
        if bias.rows() != 1 || bias.cols() != b.cols() {
            return Err(Error::Shape(format!(
                "bias of shape {:?} for {} output features",
                bias.shape(),
                b.cols()
            )));
        }
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let width = cfg.accumulator_width();
    let segs = segments(k, a.block_size(), b.block_size());
    let mut out = Vec::with_capacity(m * n);
    let mut terms = Vec::with_capacity(segs.len() + 1);
    for i in 0..m {
        let a_lane = a.lane(i);
        for j in 0..n {
            let b_lane = b.lane(j);
            terms.clear();
            for &(start, len) in &segs {
                let xa = &a_lane[start / a.block_size()];
                let wb = &b_lane[start / b.block_size()];
                let x = BlockSlice::of(xa, start % a.block_size(), len);
                let w = BlockSlice::of(wb, start % b.block_size(), len);
                terms.push(dot_slices(x, w, width)?.scaled());
            }
            if let Some(bias) = bias {
                terms.push(bias.get(0, j));
            }
            out.push(Accumulator::sum(&terms, width, i * n + j)?);
        }
    }
    Ok(out)
}

fn requantize_rows(
    rows: usize,
    cols: usize,
    accs: &[Accumulator],
    cfg: &QuantConfig,
) -> Result<MxIntTensor> {
    MxIntTensor::from_fn(
        rows,
        cols,
        BlockAxis::Dim1,
        cfg,
        TensorClass::Activation,
        |r, c| Ok(accs[r * cols + c].scaled()),
    )
}

/// `a · b` for `a` of shape `M x K` (blocked along rows) and `b` of shape
/// `K x N` (blocked along columns). Each output element is the aligned sum of
/// its block partials; output rows are re-quantized to activation blocks.
pub fn mxint_matmul(a: &MxIntTensor, b: &MxIntTensor, cfg: &QuantConfig) -> Result<MxIntTensor> {
    let accs = matmul_accumulators(a, b, None, cfg)?;
    requantize_rows(a.rows(), b.cols(), &accs, cfg)
}

/// `a · bᵀ` where both operands are blocked along their rows.
pub fn mxint_matmul_nt(a: &MxIntTensor, b: &MxIntTensor, cfg: &QuantConfig) -> Result<MxIntTensor> {
    mxint_matmul(a, &b.transpose(), cfg)
}

/// Weights (`out_features x in_features`, blocked along inputs) and an
/// optional bias (`1 x out_features`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    weights: MxIntTensor,
    bias: Option<MxIntTensor>,
}

impl LinearParams {
    pub fn new(weights: MxIntTensor, bias: Option<MxIntTensor>) -> Result<Self> {
        if weights.axis() != BlockAxis::Dim1 {
            return Err(Error::Shape(
                "weights must be blocked along in_features".into(),
            ));
        }
        if let Some(b) = &bias {
            if b.rows() != 1 || b.cols() != weights.rows() {
                return Err(Error::Shape(format!(
                    "bias shape {:?} does not match {} outputs",
                    b.shape(),
                    weights.rows()
                )));
            }
        }
        Ok(Self { weights, bias })
    }

    /// Quantizes row-major `out x in` weights and a bias with the weight class.
    pub fn quantize(
        weights: &[f64],
        out_features: usize,
        in_features: usize,
        bias: Option<&[f64]>,
        cfg: &QuantConfig,
    ) -> Result<Self> {
        let w = MxIntTensor::quantize(
            weights,
            out_features,
            in_features,
            BlockAxis::Dim1,
            cfg,
            TensorClass::Weight,
        )?;
        let b = bias
            .map(|b| {
                MxIntTensor::quantize(
                    b,
                    1,
                    out_features,
                    BlockAxis::Dim1,
                    cfg,
                    TensorClass::Weight,
                )
            })
            .transpose()?;
        Self::new(w, b)
    }

    pub fn weights(&self) -> &MxIntTensor {
        &self.weights
    }

    pub fn bias(&self) -> Option<&MxIntTensor> {
        self.bias.as_ref()
    }

    pub fn in_features(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weights.rows()
    }
}

/// `x · Wᵀ + b`, with the bias joining the reduction before the single
/// output rounding.
pub fn mxint_linear(x: &MxIntTensor, p: &LinearParams, cfg: &QuantConfig) -> Result<MxIntTensor> {
    if x.cols() != p.in_features() {
        return Err(Error::Shape(format!(
            "linear layer expects {} input features, got {}",
            p.in_features(),
            x.cols()
        )));
    }
    let accs = matmul_accumulators(x, &p.weights.transpose(), p.bias.as_ref(), cfg)?;
    requantize_rows(x.rows(), p.out_features(), &accs, cfg)
}

/// Row-major accumulator contents of `x · Wᵀ + b` before output rounding.
pub fn mxint_linear_exact(
    x: &MxIntTensor,
    p: &LinearParams,
    cfg: &QuantConfig,
) -> Result<Vec<Scaled>> {
    if x.cols() != p.in_features() {
        return Err(Error::Shape(format!(
            "linear layer expects {} input features, got {}",
            p.in_features(),
            x.cols()
        )));
    }
    let accs = matmul_accumulators(x, &p.weights.transpose(), p.bias.as_ref(), cfg)?;
    Ok(accs.iter().map(Accumulator::scaled).collect())
}

/// Row-major accumulator contents of `a · b` before output rounding.
pub fn mxint_matmul_exact(
    a: &MxIntTensor,
    b: &MxIntTensor,
    cfg: &QuantConfig,
) -> Result<Vec<Scaled>> {
    let accs = matmul_accumulators(a, b, None, cfg)?;
    Ok(accs.iter().map(Accumulator::scaled).collect())
}

/// Rounds row-major exact values onto activation blocks along `axis`.
pub fn requantize(
    values: &[Scaled],
    rows: usize,
    cols: usize,
    axis: BlockAxis,
    cfg: &QuantConfig,
) -> Result<MxIntTensor> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} values for shape [{rows}, {cols}]",
            values.len()
        )));
    }
    MxIntTensor::from_fn(rows, cols, axis, cfg, TensorClass::Activation, |r, c| {
        Ok(values[r * cols + c])
    })
}

/// A real constant as an accumulator-width fixed-point multiplier.
pub fn quantize_constant(c: f64, cfg: &QuantConfig) -> Result<Scaled> {
    if !c.is_finite() || c == 0.0 {
        return Err(Error::Domain(format!(
            "scale constant must be finite and non-zero, got {c}"
        )));
    }
    let bits = cfg
        .accumulator_mantissa_bits
        .min(crate::config::MAX_MANTISSA_BITS);
    let block = MxIntBlock::quantize_in(&[c], bits, ExponentRange::for_bits(cfg.exponent_bits))?;
    Ok(block.get(0))
}

/// Elementwise `a + b` through the accumulator, re-quantized to activation
/// blocks. The operands may use different block layouts.
pub fn residual_add(a: &MxIntTensor, b: &MxIntTensor, cfg: &QuantConfig) -> Result<MxIntTensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "residual operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let width = cfg.accumulator_width();
    let cols = a.cols();
    MxIntTensor::from_fn(
        a.rows(),
        cols,
        BlockAxis::Dim1,
        cfg,
        TensorClass::Activation,
        |r, c| {
            let terms = [a.get(r, c), b.get(r, c)];
            Ok(Accumulator::sum(&terms, width, r * cols + c)?.scaled())
        },
    )
}

/// Multiplies every element by a real constant.
///
/// Powers of two only move the shared exponents. Anything else becomes an
/// accumulator-width multiplier applied as one integer multiply per element
/// before re-quantization.
pub fn scale_by_constant(x: &MxIntTensor, c: f64, cfg: &QuantConfig) -> Result<MxIntTensor> {
    if !c.is_finite() || c == 0.0 {
        return Err(Error::Domain(format!(
            "scale constant must be finite and non-zero, got {c}"
        )));
    }
    let exact = Scaled::from_f64(c.abs());
    if c > 0.0 && exact.mantissa.unsigned_abs().is_power_of_two() {
        let shift = exact.floor_log2().unwrap() as i32;
        let range = x.exponent_range();
        let blocks = x
            .blocks()
            .iter()
            .map(|b| {
                if b.is_zero() {
                    return Ok(b.clone());
                }
                let e = b.exponent() as i64 + shift as i64;
                if e > range.max as i64 || e < range.min as i64 {
                    return Err(Error::ExponentOverflow {
                        exponent: e,
                        min: range.min,
                        max: range.max,
                    });
                }
                Ok(b.with_exponent_offset(shift))
            })
            .collect::<Result<Vec<_>>>()?;
        return MxIntTensor::from_blocks(
            x.rows(),
            x.cols(),
            x.axis(),
            x.block_size(),
            x.exponent_bits(),
            x.class(),
            blocks,
        );
    }
    let k = quantize_constant(c, cfg)?;
    MxIntTensor::from_fn(
        x.rows(),
        x.cols(),
        BlockAxis::Dim1,
        cfg,
        TensorClass::Activation,
        |r, col| {
            let v = x.get(r, col);
            Ok(Scaled::new(
                v.mantissa * k.mantissa,
                v.exponent + k.exponent,
            ))
        },
    )
}
