//! A DeiT-style encoder run end to end in the MXInt datapath and, side by
//! side, in double precision.
//!
//! Each block computes, in order:
//!
//! ```text
//!  1  Xn = LayerNorm(X)
//!  3  Qi = Xn·WQiᵀ      4  Ki = Xn·WKiᵀ      5  Vi = Xn·WViᵀ      (per head)
//!  6  Ai = Qi·Kiᵀ / sqrt(dk)
//!  7  Âi = Softmax(Ai)
//!  8  Bi = Âi·Vi
//! 10  Bc = Concat(B0 .. B(H-1))
//! 11  Bo = Bc·W0ᵀ
//! 12  Bn = LayerNorm(Bo + Xn)
//! 13  U  = Bn·WUᵀ
//! 14  D  = GELU(U)·WDᵀ
//! 15  O  = D + Bn
//! ```
//!
//! The residual on step 12 adds the normalized input `Xn`. Every projection
//! carries a bias.

mod io;
mod quantized;
mod reference;
mod weights;

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

pub use io::{
    decode_f32, encode_f32, sha256_hex, Dataset, Manifest, ModelConfig, RawTensor, TensorEntry,
};
pub use quantized::{attention_scale, run_block_mxint, QuantBlock, QuantHead, QuantModel};
pub use reference::{forward_reference, run_block_reference};
pub use weights::{patchify, BlockWeights, HeadWeights, Linear, ModelWeights, Norm};

use crate::config::DatapathConfig;
use crate::error::{Error, Result};

/// Named intermediate activations of one forward pass, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn push(&mut self, name: String, rows: usize, cols: usize, values: Vec<f64>) {
        self.entries.push(TraceEntry {
            name,
            rows,
            cols,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Mxint,
    Reference,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mxint => "mxint",
            Mode::Reference => "reference",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mxint" => Ok(Mode::Mxint),
            "reference" | "ref" | "float" => Ok(Mode::Reference),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (mxint | reference)"
            ))),
        }
    }
}

/// A model ready to run in one mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Runner {
    Reference {
        weights: Box<ModelWeights>,
        epsilon: f64,
    },
    Mxint(Box<QuantModel>),
}

impl Runner {
    pub fn new(weights: &ModelWeights, mode: Mode, cfg: &DatapathConfig) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        Ok(match mode {
            Mode::Reference => Runner::Reference {
                weights: Box::new(weights.clone()),
                epsilon: cfg.nonlinear.epsilon,
            },
            Mode::Mxint => Runner::Mxint(Box::new(QuantModel::build(weights, cfg)?)),
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Runner::Reference { .. } => Mode::Reference,
            Runner::Mxint(_) => Mode::Mxint,
        }
    }

    pub fn weights(&self) -> &ModelWeights {
        match self {
            Runner::Reference { weights, .. } => weights,
            Runner::Mxint(q) => &q.weights,
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_traced(input, None)
    }

    pub fn forward_traced(&self, input: &[f64], trace: Option<&mut Trace>) -> Result<Vec<f64>> {
        if let Some(index) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: input[index],
            });
        }
        match self {
            Runner::Reference { weights, epsilon } => {
                forward_reference(input, weights, *epsilon, trace)
            }
            Runner::Mxint(q) => q.forward(input, trace),
        }
    }
}

/// Logits of one input in the requested mode.
pub fn run_model(
    input: &[f64],
    weights: &ModelWeights,
    mode: Mode,
    cfg: &DatapathConfig,
) -> Result<Vec<f64>> {
    Runner::new(weights, mode, cfg)?.forward(input)
}

/// Index of the first maximal logit.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 results over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub correct: usize,
    pub total: usize,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Per-sample agreement of two evaluations over the same dataset.
    pub fn agreement(&self, other: &Evaluation) -> Vec<bool> {
        self.predictions
            .iter()
            .zip(&other.predictions)
            .map(|(a, b)| a == b)
            .collect()
    }
}

/// Evaluates every sample (in parallel, results in dataset order).
pub fn evaluate(runner: &Runner, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let classes = runner.weights().config.num_classes;
    if let Some(&l) = dataset.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {l} outside the model's {classes} classes"
        )));
    }
    let predictions = dataset
        .samples
        .par_iter()
        .map(|s| runner.forward(s).map(|logits| argmax(&logits)))
        .collect::<Result<Vec<_>>>()?;
    let correct = predictions
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(Evaluation {
        predictions,
        correct,
        total: dataset.len(),
    })
}

/// Error statistics of one named activation, MXInt against reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDivergence {
    pub name: String,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `max_abs` divided by the largest reference magnitude.
    pub max_rel: f64,
}

/// Per-layer divergence over a dataset and the first layer whose relative
/// error exceeds `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub layers: Vec<LayerDivergence>,
    pub threshold: f64,
    pub first_flagged: Option<String>,
}

/// Runs both paths on every sample and compares their traces.
pub fn compare(mxint: &QuantModel, dataset: &Dataset, threshold: f64) -> Result<DivergenceReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let eps = mxint.config.nonlinear.epsilon;
    let per_sample = dataset
        .samples
        .par_iter()
        .map(|s| {
            let mut tq = Trace::default();
            let mut tr = Trace::default();
            mxint.forward(s, Some(&mut tq))?;
            forward_reference(s, &mxint.weights, eps, Some(&mut tr))?;
            Ok((tq, tr))
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = per_sample[0]
        .1
        .entries
        .iter()
        .map(|e| e.name.clone())
        .collect();
    let mut layers = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let (mut max_abs, mut sum, mut count, mut ref_max) = (0f64, 0f64, 0usize, 0f64);
        for (tq, tr) in &per_sample {
            let (q, r) = (&tq.entries[i], &tr.entries[i]);
            debug_assert_eq!(q.name, r.name);
            for (a, b) in q.values.iter().zip(&r.values) {
                let e = (a - b).abs();
                max_abs = max_abs.max(e);
                sum += e;
                ref_max = ref_max.max(b.abs());
            }
            count += r.values.len();
        }
        layers.push(LayerDivergence {
            name: name.clone(),
            max_abs,
            mean_abs: sum / count as f64,
            max_rel: if ref_max > 0.0 {
                max_abs / ref_max
            } else {
                max_abs
            },
        });
    }
    let first_flagged = layers
        .iter()
        .find(|l| l.max_rel > threshold)
        .map(|l| l.name.clone());
    Ok(DivergenceReport {
        layers,
        threshold,
        first_flagged,
    })
}

/// Loads a manifest and assembles its model.
pub fn load_model(manifest_path: &Path) -> Result<(Manifest, ModelWeights)> {
    let manifest = Manifest::load(manifest_path)?;
    let tensors = manifest.load_tensors(manifest_path)?;
    let weights = ModelWeights::from_tensors(manifest.model, &tensors)?;
    Ok((manifest, weights))
}
