//! Quantization and non-linear datapath configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which quantization parameters a tensor is stored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorClass {
    Weight,
    Activation,
}

/// Mantissa widths, block sizes and accumulator width of the MXInt datapath.
///
/// Quantization always rounds to nearest, ties to even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub weight_mantissa_bits: u32,
    pub activation_mantissa_bits: u32,
    pub weight_block_size: usize,
    pub activation_block_size: usize,
    pub exponent_bits: u32,
    pub accumulator_mantissa_bits: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            weight_mantissa_bits: 6,
            activation_mantissa_bits: 8,
            weight_block_size: 256,
            activation_block_size: 16,
            exponent_bits: 8,
            accumulator_mantissa_bits: 12,
        }
    }
}

pub const MAX_MANTISSA_BITS: u32 = 16;
pub const MAX_ACCUMULATOR_BITS: u32 = 48;

impl QuantConfig {
    /// Same widths for weights, activations and the accumulator.
    pub fn uniform(mantissa_bits: u32) -> Self {
        Self {
            weight_mantissa_bits: mantissa_bits,
            activation_mantissa_bits: mantissa_bits,
            accumulator_mantissa_bits: mantissa_bits.max(12),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [
            ("weight_mantissa_bits", self.weight_mantissa_bits),
            ("activation_mantissa_bits", self.activation_mantissa_bits),
        ] {
            if !(2..=MAX_MANTISSA_BITS).contains(&bits) {
                return Err(Error::Config(format!(
                    "{name} = {bits} outside 2..={MAX_MANTISSA_BITS}"
                )));
            }
        }
        if !(2..=16).contains(&self.exponent_bits) {
            return Err(Error::Config(format!(
                "exponent_bits = {} outside 2..=16",
                self.exponent_bits
            )));
        }
        let widest = self.weight_mantissa_bits.max(self.activation_mantissa_bits);
        if self.accumulator_mantissa_bits < widest
            || self.accumulator_mantissa_bits > MAX_ACCUMULATOR_BITS
        {
            return Err(Error::Config(format!(
                "accumulator_mantissa_bits = {} must lie in {widest}..={MAX_ACCUMULATOR_BITS}",
                self.accumulator_mantissa_bits
            )));
        }
        if self.weight_block_size == 0 || self.activation_block_size == 0 {
            return Err(Error::Config("block sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mantissa_bits(&self, class: TensorClass) -> u32 {
        match class {
            TensorClass::Weight => self.weight_mantissa_bits,
            TensorClass::Activation => self.activation_mantissa_bits,
        }
    }

    pub fn block_size(&self, class: TensorClass) -> usize {
        match class {
            TensorClass::Weight => self.weight_block_size,
            TensorClass::Activation => self.activation_block_size,
        }
    }

    /// Largest shared exponent; the range is symmetric, `[-max, max]`.
    pub fn max_exponent(&self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    pub fn min_exponent(&self) -> i32 {
        -self.max_exponent()
    }

    /// Width of the reduction register: the stored accumulator mantissa plus
    /// `ceil(log2(k))` guard bits for a `k`-term block reduction.
    pub fn accumulator_width(&self) -> u32 {
        self.accumulator_mantissa_bits + ceil_log2(self.activation_block_size)
    }

    /// Storage cost in bits per element for a full block of the given class.
    pub fn bits_per_element(&self, class: TensorClass) -> f64 {
        self.mantissa_bits(class) as f64 + self.exponent_bits as f64 / self.block_size(class) as f64
    }
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// LUT sizes and domains of the LayerNorm, GELU and Softmax datapaths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub layernorm_lut_bits: u32,
    pub gelu_lut_bits: u32,
    /// Half-width `a` of the GELU table domain `[-a, a)`.
    pub gelu_domain: f64,
    pub softmax_r_bits: u32,
    /// Fractional bits of `x * log2(e)` inside the exp decomposition. `None`
    /// means `activation_mantissa_bits + softmax_r_bits + 2`.
    pub exp_frac_bits: Option<u32>,
    /// Only used by the double-precision reference path; the MXInt LayerNorm
    /// treats epsilon as zero.
    pub epsilon: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            layernorm_lut_bits: 5,
            gelu_lut_bits: 5,
            gelu_domain: 3.0,
            softmax_r_bits: 2,
            exp_frac_bits: None,
            epsilon: 1e-5,
        }
    }
}

pub const MAX_LUT_BITS: u32 = 16;

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [
            ("layernorm_lut_bits", self.layernorm_lut_bits),
            ("gelu_lut_bits", self.gelu_lut_bits),
            ("softmax_r_bits", self.softmax_r_bits),
        ] {
            if !(1..=MAX_LUT_BITS).contains(&bits) {
                return Err(Error::Config(format!(
                    "{name} = {bits} outside 1..={MAX_LUT_BITS}"
                )));
            }
        }
        if !(self.gelu_domain.is_finite() && self.gelu_domain > 0.0) {
            return Err(Error::Config(format!(
                "gelu_domain must be positive, got {}",
                self.gelu_domain
            )));
        }
        if let Some(f) = self.exp_frac_bits {
            if f < self.softmax_r_bits || f > 40 {
                return Err(Error::Config(format!(
                    "exp_frac_bits = {f} must lie in softmax_r_bits..=40"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(
                "epsilon must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn exp_frac_bits(&self, quant: &QuantConfig) -> u32 {
        self.exp_frac_bits
            .unwrap_or(quant.activation_mantissa_bits + self.softmax_r_bits + 2)
    }
}

/// Both configurations of one MXInt run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatapathConfig {
    pub quant: QuantConfig,
    pub nonlinear: NonlinearConfig,
}

impl DatapathConfig {
    pub fn validate(&self) -> Result<()> {
        self.quant.validate()?;
        self.nonlinear.validate()
    }

    /// Short hash identifying the effective configuration in reports.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configs always serialize");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }
}
