use super::block::{ExponentRange, MxIntBlock};
use super::rounding::Scaled;
use crate::config::{QuantConfig, TensorClass};
use crate::error::{Error, Result};

/// Dimension along which the blocks of a matrix run.
///
/// `Dim1` groups consecutive elements of a row (each row is a lane);
/// `Dim0` groups consecutive elements of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockAxis {
    Dim0,
    Dim1,
}

impl BlockAxis {
    pub fn flipped(self) -> Self {
        match self {
            BlockAxis::Dim0 => BlockAxis::Dim1,
            BlockAxis::Dim1 => BlockAxis::Dim0,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            BlockAxis::Dim0 => 0,
            BlockAxis::Dim1 => 1,
        }
    }
}

/// A rank-2 MXInt tensor. Vectors are stored as `1 x n` matrices.
///
/// Each lane (a row for `Dim1`, a column for `Dim0`) is split into
/// `ceil(lane_len / block_size)` blocks; the tail of the last block is zero
/// padding that never enters a reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MxIntTensor {
    rows: usize,
    cols: usize,
    axis: BlockAxis,
    block_size: usize,
    mantissa_bits: u32,
    exponent_bits: u32,
    class: TensorClass,
    blocks: Vec<MxIntBlock>,
}

impl MxIntTensor {
    /// Assembles a tensor from lane-major blocks, validating the layout.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        rows: usize,
        cols: usize,
        axis: BlockAxis,
        block_size: usize,
        exponent_bits: u32,
        class: TensorClass,
        blocks: Vec<MxIntBlock>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty(format!("tensor shape [{rows}, {cols}]")));
        }
        let (lanes, lane_len) = lane_geometry(rows, cols, axis);
        let expected = lanes * lane_len.div_ceil(block_size);
        if blocks.len() != expected {
            return Err(Error::Shape(format!(
                "[{rows}, {cols}] with block size {block_size} needs {expected} blocks, got {}",
                blocks.len()
            )));
        }
        let mantissa_bits = blocks[0].mantissa_bits();
        if let Some(b) = blocks
            .iter()
            .find(|b| b.len() != block_size || b.mantissa_bits() != mantissa_bits)
        {
            return Err(Error::Shape(format!(
                "heterogeneous block: {} elements of {} bits, expected {block_size} of {mantissa_bits}",
                b.len(),
                b.mantissa_bits()
            )));
        }
        Ok(Self {
            rows,
            cols,
            axis,
            block_size,
            mantissa_bits,
            exponent_bits,
            class,
            blocks,
        })
    }

    /// Quantizes a row-major matrix with blocks along `axis`.
    pub fn quantize(
        values: &[f64],
        rows: usize,
        cols: usize,
        axis: BlockAxis,
        cfg: &QuantConfig,
        class: TensorClass,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for shape [{rows}, {cols}]",
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Self::from_fn(rows, cols, axis, cfg, class, |r, c| {
            Ok(Scaled::from_f64(values[r * cols + c]))
        })
    }

    /// Builds a tensor by rounding exact values `f(row, col)` onto the block
    /// grid of `class` (round to nearest even, saturating).
    pub fn from_fn<F>(
        rows: usize,
        cols: usize,
        axis: BlockAxis,
        cfg: &QuantConfig,
        class: TensorClass,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<Scaled>,
    {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty(format!("tensor shape [{rows}, {cols}]")));
        }
        let block_size = cfg.block_size(class);
        let bits = cfg.mantissa_bits(class);
        let range = ExponentRange::for_bits(cfg.exponent_bits);
        let (lanes, lane_len) = lane_geometry(rows, cols, axis);
        let per_lane = lane_len.div_ceil(block_size);
        let mut blocks = Vec::with_capacity(lanes * per_lane);
        let mut buf = Vec::with_capacity(block_size);
        for lane in 0..lanes {
            for b in 0..per_lane {
                buf.clear();
                for k in 0..block_size {
                    let i = b * block_size + k;
                    if i < lane_len {
                        let (r, c) = match axis {
                            BlockAxis::Dim1 => (lane, i),
                            BlockAxis::Dim0 => (i, lane),
                        };
                        buf.push(f(r, c)?);
                    } else {
                        buf.push(Scaled::ZERO);
                    }
                }
                blocks.push(MxIntBlock::from_exact(&buf, bits, range)?);
            }
        }
        Ok(Self {
            rows,
            cols,
            axis,
            block_size,
            mantissa_bits: bits,
            exponent_bits: cfg.exponent_bits,
            class,
            blocks,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn axis(&self) -> BlockAxis {
        self.axis
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn exponent_range(&self) -> ExponentRange {
        ExponentRange::for_bits(self.exponent_bits)
    }

    pub fn class(&self) -> TensorClass {
        self.class
    }

    pub fn blocks(&self) -> &[MxIntBlock] {
        &self.blocks
    }

    pub fn num_elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_lanes(&self) -> usize {
        lane_geometry(self.rows, self.cols, self.axis).0
    }

    pub fn lane_len(&self) -> usize {
        lane_geometry(self.rows, self.cols, self.axis).1
    }

    pub fn blocks_per_lane(&self) -> usize {
        self.lane_len().div_ceil(self.block_size)
    }

    /// The blocks of one lane, in order.
    pub fn lane(&self, lane: usize) -> &[MxIntBlock] {
        let n = self.blocks_per_lane();
        &self.blocks[lane * n..(lane + 1) * n]
    }

    /// Exact value of element `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> Scaled {
        let (lane, i) = match self.axis {
            BlockAxis::Dim1 => (row, col),
            BlockAxis::Dim0 => (col, row),
        };
        let block = &self.blocks[lane * self.blocks_per_lane() + i / self.block_size];
        block.get(i % self.block_size)
    }

    /// Row-major dequantized values.
    pub fn dequantize(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        let per_lane = self.blocks_per_lane();
        let lane_len = self.lane_len();
        for (bi, block) in self.blocks.iter().enumerate() {
            let lane = bi / per_lane;
            let base = (bi % per_lane) * self.block_size;
            for (k, v) in block.dequantize().into_iter().enumerate() {
                let i = base + k;
                if i >= lane_len {
                    break;
                }
                let idx = match self.axis {
                    BlockAxis::Dim1 => lane * self.cols + i,
                    BlockAxis::Dim0 => i * self.cols + lane,
                };
                out[idx] = v;
            }
        }
        out
    }

    /// Transposes without touching any block: only the axis tag flips.
    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            axis: self.axis.flipped(),
            ..self.clone()
        }
    }

    /// Adds `delta` to every shared exponent.
    pub fn with_exponent_offset(&self, delta: i32) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.with_exponent_offset(delta))
                .collect(),
            ..self.clone()
        }
    }

    /// Stored bits: one exponent per block plus one mantissa per padded slot.
    pub fn storage_bits(&self) -> u64 {
        let padded = self.blocks.len() * self.block_size;
        self.blocks.len() as u64 * self.exponent_bits as u64
            + padded as u64 * self.mantissa_bits as u64
    }

    /// Rows `start..end` of a `Dim1`-blocked tensor; blocks are shared.
    pub fn row_range(&self, start: usize, end: usize) -> Result<Self> {
        if self.axis != BlockAxis::Dim1 || start >= end || end > self.rows {
            return Err(Error::Shape(format!(
                "row slice {start}..{end} of [{}, {}] along {:?}",
                self.rows, self.cols, self.axis
            )));
        }
        let n = self.blocks_per_lane();
        Ok(Self {
            rows: end - start,
            blocks: self.blocks[start * n..end * n].to_vec(),
            ..self.clone()
        })
    }

    /// Stacks `Dim1`-blocked tensors with identical column layout vertically.
    pub fn vstack(parts: &[&MxIntTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("nothing to stack".into()))?;
        let mut blocks = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.axis != BlockAxis::Dim1
                || p.cols != first.cols
                || p.block_size != first.block_size
                || p.mantissa_bits != first.mantissa_bits
            {
                return Err(Error::Shape(
                    "vstack needs matching row-blocked layouts".into(),
                ));
            }
            rows += p.rows;
            blocks.extend_from_slice(&p.blocks);
        }
        Ok(Self {
            rows,
            blocks,
            ..(*first).clone()
        })
    }
}

fn lane_geometry(rows: usize, cols: usize, axis: BlockAxis) -> (usize, usize) {
    match axis {
        BlockAxis::Dim1 => (rows, cols),
        BlockAxis::Dim0 => (cols, rows),
    }
}

/// Quantizes a row-major tensor along its last dimension with the block size
/// and mantissa width of `class`.
pub fn quantize_tensor(
    values: &[f64],
    shape: &[usize],
    cfg: &QuantConfig,
    class: TensorClass,
) -> Result<MxIntTensor> {
    let (rows, cols) = match *shape {
        [n] => (1, n),
        [r, c] => (r, c),
        _ => {
            return Err(Error::Shape(format!(
                "only rank-1 and rank-2 tensors are supported, got {shape:?}"
            )))
        }
    };
    cfg.validate()?;
    MxIntTensor::quantize(values, rows, cols, BlockAxis::Dim1, cfg, class)
}
