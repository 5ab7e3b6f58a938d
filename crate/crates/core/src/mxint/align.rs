use super::block::MxIntBlock;
use super::rounding::shift_right_floor;

/// Mantissas of several blocks re-expressed on one common exponent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedGroup {
    pub common_exponent: i32,
    pub mantissas: Vec<i64>,
}

impl AlignedGroup {
    pub fn dequantize(&self) -> Vec<f64> {
        let scale = (self.common_exponent as f64).exp2();
        self.mantissas.iter().map(|&m| m as f64 * scale).collect()
    }
}

/// Right-shifts every block onto the largest shared exponent.
///
/// Bits shifted out are discarded (arithmetic shift, rounding toward negative
/// infinity), as a hardware barrel shifter does. Only the first `valid`
/// elements across the concatenated blocks are kept, so zero padding never
/// reaches a reduction.
///
/// # Panics
///
/// If `blocks` is empty or the blocks disagree on mantissa width.
pub fn align_blocks_valid(blocks: &[MxIntBlock], valid: usize) -> AlignedGroup {
    assert!(!blocks.is_empty(), "align_blocks needs at least one block");
    let bits = blocks[0].mantissa_bits();
    assert!(
        blocks.iter().all(|b| b.mantissa_bits() == bits),
        "align_blocks needs a homogeneous mantissa width"
    );
    let common_exponent = blocks.iter().map(|b| b.exponent()).max().unwrap();
    let mantissas = blocks
        .iter()
        .flat_map(|b| {
            let shift = (common_exponent - b.exponent()) as u32;
            b.mantissas()
                .iter()
                .map(move |&m| shift_right_floor(m as i128, shift) as i64)
        })
        .take(valid)
        .collect();
    AlignedGroup {
        common_exponent,
        mantissas,
    }
}

pub fn align_blocks(blocks: &[MxIntBlock]) -> AlignedGroup {
    let total = blocks.iter().map(MxIntBlock::len).sum();
    align_blocks_valid(blocks, total)
}
