//! Design-space exploration: accuracy sweeps over one datapath parameter,
//! a greedy bitwidth search under an accuracy budget and the storage cost
//! model.

mod cost;
mod search;
mod sweep;

use std::collections::HashMap;
use std::sync::Mutex;

pub use cost::{
    activation_elements, cost_report, vanilla_lut_bits, ClassCost, CostReport, ElementCounts,
    LutCost, VANILLA_GELU_LUT_BITS, VANILLA_LAYERNORM_LUT_BITS, VANILLA_SOFTMAX_LUT_BITS,
};
pub use search::{greedy_search, SearchOptions, SearchParam, SearchResult, SearchStep};
pub use sweep::{sweep, Curve, CurvePoint, SweepSpec, SweepTarget};

use crate::config::DatapathConfig;
use crate::error::Result;
use crate::vit::{evaluate, Dataset, Mode, ModelWeights, Runner};

/// Accuracy loss in percentage points, rounded to 1e-9 so that counts
/// like 495/500 against 500/500 land exactly on 1.0.
pub fn loss_pp(reference: f64, accuracy: f64) -> f64 {
    ((reference - accuracy) * 100.0 * 1e9).round() / 1e9
}

/// Top-1 accuracy of a model under a datapath configuration.
pub trait Evaluator: Sync {
    fn reference_accuracy(&self) -> Result<f64>;
    fn accuracy(&self, cfg: &DatapathConfig) -> Result<f64>;
}

/// Evaluates the MXInt path over a dataset, caching results by config
/// fingerprint.
#[derive(Debug)]
pub struct ModelEvaluator {
    weights: ModelWeights,
    dataset: Dataset,
    reference: f64,
    cache: Mutex<HashMap<String, f64>>,
}

impl ModelEvaluator {
    /// Runs the reference path once up front.
    pub fn new(weights: ModelWeights, dataset: Dataset) -> Result<Self> {
        let runner = Runner::new(&weights, Mode::Reference, &DatapathConfig::default())?;
        let reference = evaluate(&runner, &dataset)?.accuracy();
        Ok(Self {
            weights,
            dataset,
            reference,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Distinct configurations evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl Evaluator for ModelEvaluator {
    fn reference_accuracy(&self) -> Result<f64> {
        Ok(self.reference)
    }

    fn accuracy(&self, cfg: &DatapathConfig) -> Result<f64> {
        let key = cfg.fingerprint();
        if let Some(&a) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(a);
        }
        let runner = Runner::new(&self.weights, Mode::Mxint, cfg)?;
        let a = evaluate(&runner, &self.dataset)?.accuracy();
        self.cache.lock().expect("cache lock").insert(key, a);
        Ok(a)
    }
}

/// Evaluator backed by a closure, for tests and synthetic landscapes.
pub struct FnEvaluator<F> {
    pub reference: f64,
    pub f: F,
}

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&DatapathConfig) -> Result<f64> + Sync,
{
    fn reference_accuracy(&self) -> Result<f64> {
        Ok(self.reference)
    }

    fn accuracy(&self, cfg: &DatapathConfig) -> Result<f64> {
        (self.f)(cfg)
    }
}
