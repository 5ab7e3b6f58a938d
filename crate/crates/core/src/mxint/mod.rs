//! The MXInt number format: shared-exponent blocks of signed integer
//! mantissas, their quantization, and cross-block exponent alignment.

mod align;
mod block;
mod minifloat;
pub mod rounding;
mod tensor;

pub use align::{align_blocks, align_blocks_valid, AlignedGroup};
pub use block::{
    dequantize_block, quantize_block, ExponentRange, MxIntBlock, DEFAULT_EXPONENT_BITS,
};
pub use minifloat::{to_minifloat, MiniFloat};
pub use rounding::Scaled;
pub use tensor::{quantize_tensor, BlockAxis, MxIntTensor};
