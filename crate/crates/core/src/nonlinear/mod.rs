//! Table-driven LayerNorm, GELU and Softmax on MXInt operands.

mod gelu;
mod layernorm;
pub mod lut;
mod softmax;

pub use gelu::{gelu_block, gelu_mxint};
pub use layernorm::{inv_sqrt, layernorm_mxint, layernorm_row, LayerNormParams};
pub use lut::{gelu_exact, EvalPoint, LutKind, LutTable};
pub use softmax::{
    exp_decompose, exp_term, log2e_fixed, mxint_divide, softmax_from_terms, softmax_mxint,
    softmax_row, softmax_width, ExpParts,
};

use crate::config::NonlinearConfig;
use crate::error::Result;

/// The three tables one datapath configuration needs.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearUnits {
    pub inv_sqrt: LutTable,
    pub gelu: LutTable,
    pub pow2: LutTable,
}

impl NonlinearUnits {
    pub fn build(cfg: &NonlinearConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            inv_sqrt: LutTable::inv_sqrt(cfg.layernorm_lut_bits)?,
            gelu: LutTable::gelu(cfg.gelu_lut_bits, cfg.gelu_domain)?,
            pow2: LutTable::pow2(cfg.softmax_r_bits)?,
        })
    }

    pub fn table(&self, kind: LutKind) -> &LutTable {
        match kind {
            LutKind::InvSqrt => &self.inv_sqrt,
            LutKind::Gelu => &self.gelu,
            LutKind::Pow2 => &self.pow2,
        }
    }
}
