//! Hardware cost proxies: LUT sizes, storage bits per element and memory
//! density against 32-bit floats.

use serde::Serialize;

use crate::config::{DatapathConfig, TensorClass};
use crate::error::Result;
use crate::nonlinear::{LutKind, LutTable, NonlinearUnits};
use crate::vit::{ModelConfig, ModelWeights};

/// Entry-address widths of the unoptimized tables used as the comparison
/// baseline.
pub const VANILLA_GELU_LUT_BITS: u32 = 14;
pub const VANILLA_SOFTMAX_LUT_BITS: u32 = 16;
pub const VANILLA_LAYERNORM_LUT_BITS: u32 = 13;

pub fn vanilla_lut_bits(kind: LutKind) -> u32 {
    match kind {
        LutKind::Gelu => VANILLA_GELU_LUT_BITS,
        LutKind::Pow2 => VANILLA_SOFTMAX_LUT_BITS,
        LutKind::InvSqrt => VANILLA_LAYERNORM_LUT_BITS,
    }
}

/// Element counts the blended density is weighted by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ElementCounts {
    pub weights: u64,
    /// Activation elements stored per forward pass.
    pub activations: u64,
}

impl ElementCounts {
    pub fn of_model(weights: &ModelWeights) -> Self {
        Self {
            weights: weights.parameter_count() as u64,
            activations: activation_elements(&weights.config),
        }
    }
}

/// Quantized activation elements one forward pass materializes: the patch
/// input, the embedding and every intermediate of every block.
pub fn activation_elements(c: &ModelConfig) -> u64 {
    let (t, d, m) = (c.tokens() as u64, c.dim as u64, c.mlp_dim as u64);
    let patches = (c.num_patches() * c.patch_dim()) as u64;
    // ln1, attention, proj, residual sum, ln2, mlp_down, out
    let per_block = 7 * t * d
        // q, k, v per head plus scores and probabilities
        + c.heads as u64 * (3 * t * c.head_dim() as u64 + 2 * t * t)
        // mlp_up, gelu
        + 2 * t * m;
    patches + t * d + c.layers as u64 * per_block
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LutCost {
    pub kind: LutKind,
    pub entry_bits: u32,
    pub entries: u64,
    pub word_bits: u32,
    pub storage_bits: u64,
    pub vanilla_entry_bits: u32,
    pub vanilla_entries: u64,
    /// `vanilla_entries / entries`.
    pub reduction: f64,
}

impl LutCost {
    pub fn of(table: &LutTable) -> Self {
        let entries = 1u64 << table.index_bits();
        let vanilla = vanilla_lut_bits(table.kind());
        Self {
            kind: table.kind(),
            entry_bits: table.index_bits(),
            entries,
            word_bits: table.word_bits(),
            storage_bits: entries * table.word_bits() as u64,
            vanilla_entry_bits: vanilla,
            vanilla_entries: 1u64 << vanilla,
            reduction: 2f64.powi(vanilla as i32 - table.index_bits() as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCost {
    pub class: TensorClass,
    pub mantissa_bits: u32,
    pub block_size: usize,
    pub exponent_bits: u32,
    pub bits_per_element: f64,
    /// `32 / bits_per_element`.
    pub density: f64,
    pub elements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub fingerprint: String,
    pub luts: Vec<LutCost>,
    pub weights: ClassCost,
    pub activations: ClassCost,
    /// Element-weighted mean over both classes.
    pub blended_bits_per_element: f64,
    pub blended_density: f64,
    pub accuracy: Option<f64>,
    pub loss_pp: Option<f64>,
}

impl CostReport {
    pub fn with_accuracy(mut self, accuracy: f64, reference: f64) -> Self {
        self.accuracy = Some(accuracy);
        self.loss_pp = Some(super::loss_pp(reference, accuracy));
        self
    }

    pub fn lut(&self, kind: LutKind) -> &LutCost {
        self.luts
            .iter()
            .find(|l| l.kind == kind)
            .expect("all three tables are reported")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "item,entry_bits,count,word_bits,storage_bits,bits_per_element,density,reduction\n",
        );
        for l in &self.luts {
            out += &format!(
                "lut_{},{},{},{},{},,,{}\n",
                l.kind.name(),
                l.entry_bits,
                l.entries,
                l.word_bits,
                l.storage_bits,
                l.reduction
            );
        }
        for c in [&self.weights, &self.activations] {
            let name = match c.class {
                TensorClass::Weight => "weights",
                TensorClass::Activation => "activations",
            };
            out += &format!(
                "{name},,{},,,{},{},\n",
                c.elements, c.bits_per_element, c.density
            );
        }
        out += &format!(
            "blended,,,,,{},{},\n",
            self.blended_bits_per_element, self.blended_density
        );
        out
    }
}

fn class_cost(cfg: &DatapathConfig, class: TensorClass, elements: u64) -> ClassCost {
    let bpe = cfg.quant.bits_per_element(class);
    ClassCost {
        class,
        mantissa_bits: cfg.quant.mantissa_bits(class),
        block_size: cfg.quant.block_size(class),
        exponent_bits: cfg.quant.exponent_bits,
        bits_per_element: bpe,
        density: 32.0 / bpe,
        elements,
    }
}

/// LUT sizes and storage cost of one configuration.
pub fn cost_report(cfg: &DatapathConfig, counts: &ElementCounts) -> Result<CostReport> {
    cfg.validate()?;
    let units = NonlinearUnits::build(&cfg.nonlinear)?;
    let luts = [LutKind::Gelu, LutKind::Pow2, LutKind::InvSqrt]
        .into_iter()
        .map(|k| LutCost::of(units.table(k)))
        .collect();
    let weights = class_cost(cfg, TensorClass::Weight, counts.weights);
    let activations = class_cost(cfg, TensorClass::Activation, counts.activations);
    let total = counts.weights + counts.activations;
    let blended = if total == 0 {
        (weights.bits_per_element + activations.bits_per_element) / 2.0
    } else {
        let share = counts.activations as f64 / total as f64;
        weights.bits_per_element + (activations.bits_per_element - weights.bits_per_element) * share
    };
    Ok(CostReport {
        fingerprint: cfg.fingerprint(),
        luts,
        weights,
        activations,
        blended_bits_per_element: blended,
        blended_density: 32.0 / blended,
        accuracy: None,
        loss_pp: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bits_per_element() {
        let r = cost_report(
            &DatapathConfig::default(),
            &ElementCounts {
                weights: 1,
                activations: 1,
            },
        )
        .unwrap();
        assert_eq!(r.activations.bits_per_element, 8.5);
        assert_eq!(r.weights.bits_per_element, 6.03125);
        assert_eq!(r.weights.density, 32.0 / 6.03125);
        assert_eq!(r.blended_bits_per_element, (8.5 + 6.03125) / 2.0);
    }

    #[test]
    fn blend_follows_counts() {
        let cfg = DatapathConfig::default();
        let only_w = cost_report(
            &cfg,
            &ElementCounts {
                weights: 10,
                activations: 0,
            },
        )
        .unwrap();
        assert_eq!(only_w.blended_density, only_w.weights.density);
        let r = cost_report(
            &cfg,
            &ElementCounts {
                weights: 3,
                activations: 1,
            },
        )
        .unwrap();
        assert_eq!(r.blended_bits_per_element, (3.0 * 6.03125 + 8.5) / 4.0);
        let only_a = cost_report(
            &cfg,
            &ElementCounts {
                weights: 0,
                activations: 7,
            },
        )
        .unwrap();
        assert_eq!(only_a.blended_density, only_a.activations.density);
    }

    #[test]
    fn lut_reductions() {
        let r = cost_report(
            &DatapathConfig::default(),
            &ElementCounts {
                weights: 0,
                activations: 0,
            },
        )
        .unwrap();
        assert_eq!(r.lut(LutKind::Gelu).entries, 32);
        assert_eq!(r.lut(LutKind::Pow2).entries, 4);
        assert_eq!(r.lut(LutKind::Gelu).reduction, 512.0);
        assert_eq!(r.lut(LutKind::Pow2).reduction, 16384.0);
        assert_eq!(r.lut(LutKind::InvSqrt).reduction, 256.0);
    }

    #[test]
    fn csv_has_one_line_per_item() {
        let r = cost_report(
            &DatapathConfig::default(),
            &ElementCounts {
                weights: 4,
                activations: 4,
            },
        )
        .unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 2 + 1);
        assert!(csv.contains("weights,,4,,,6.03125,"));
    }
}
