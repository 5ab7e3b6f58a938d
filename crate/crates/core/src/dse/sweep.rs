use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss_pp, Evaluator};
use crate::config::DatapathConfig;
use crate::error::{Error, Result};

/// The single parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    LayernormLutBits,
    GeluLutBits,
    GeluDomain,
    SoftmaxRBits,
    WeightM,
    ActivationM,
}

impl SweepTarget {
    pub const ALL: [SweepTarget; 6] = [
        SweepTarget::LayernormLutBits,
        SweepTarget::GeluLutBits,
        SweepTarget::GeluDomain,
        SweepTarget::SoftmaxRBits,
        SweepTarget::WeightM,
        SweepTarget::ActivationM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepTarget::LayernormLutBits => "layernorm_lut_bits",
            SweepTarget::GeluLutBits => "gelu_lut_bits",
            SweepTarget::GeluDomain => "gelu_domain",
            SweepTarget::SoftmaxRBits => "softmax_r_bits",
            SweepTarget::WeightM => "weight_m",
            SweepTarget::ActivationM => "activation_m",
        }
    }

    fn is_integral(self) -> bool {
        self != SweepTarget::GeluDomain
    }

    /// `base` with this parameter set to `value`. Mantissa changes widen
    /// the accumulator when it would otherwise be narrower than a mantissa.
    pub fn apply(self, base: &DatapathConfig, value: f64) -> Result<DatapathConfig> {
        if self.is_integral() && (value.fract() != 0.0 || !(0.0..=64.0).contains(&value)) {
            return Err(Error::Config(format!(
                "{} takes whole bit counts, got {value}",
                self.name()
            )));
        }
        let bits = value as u32;
        let mut cfg = *base;
        match self {
            SweepTarget::LayernormLutBits => cfg.nonlinear.layernorm_lut_bits = bits,
            SweepTarget::GeluLutBits => cfg.nonlinear.gelu_lut_bits = bits,
            SweepTarget::GeluDomain => cfg.nonlinear.gelu_domain = value,
            SweepTarget::SoftmaxRBits => cfg.nonlinear.softmax_r_bits = bits,
            SweepTarget::WeightM => cfg.quant.weight_mantissa_bits = bits,
            SweepTarget::ActivationM => cfg.quant.activation_mantissa_bits = bits,
        }
        if matches!(self, SweepTarget::WeightM | SweepTarget::ActivationM) {
            let q = &mut cfg.quant;
            q.accumulator_mantissa_bits = q
                .accumulator_mantissa_bits
                .max(q.weight_mantissa_bits)
                .max(q.activation_mantissa_bits);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep target `{s}`")))
    }
}

/// One parameter, the values it takes and the configuration everything
/// else is held at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub target: SweepTarget,
    pub values: Vec<f64>,
    pub fixed: DatapathConfig,
}

impl SweepSpec {
    pub fn new(target: SweepTarget, values: Vec<f64>, fixed: DatapathConfig) -> Self {
        Self {
            target,
            values,
            fixed,
        }
    }

    /// Whole-number range `lo..=hi`.
    pub fn bits(target: SweepTarget, lo: u32, hi: u32, fixed: DatapathConfig) -> Self {
        Self::new(target, (lo..=hi).map(f64::from).collect(), fixed)
    }

    /// The configuration of every point, validated.
    pub fn configs(&self) -> Result<Vec<DatapathConfig>> {
        if self.values.is_empty() {
            return Err(Error::Empty(format!("{} sweep range", self.target)));
        }
        self.values
            .iter()
            .map(|&v| self.target.apply(&self.fixed, v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub value: f64,
    pub accuracy: f64,
    pub loss_pp: f64,
    pub fingerprint: String,
}

/// Accuracy loss against the reference path at each sweep value, in the
/// order of the spec.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub target: SweepTarget,
    pub reference_accuracy: f64,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,accuracy,loss_pp,fingerprint\n");
        for p in &self.points {
            out += &format!(
                "{},{},{},{}\n",
                p.value, p.accuracy, p.loss_pp, p.fingerprint
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curves always serialize") + "\n"
    }

    /// True when loss never rises from one point to the next.
    pub fn is_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].loss_pp <= w[0].loss_pp)
    }

    pub fn loss_at(&self, value: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.value == value)
            .map(|p| p.loss_pp)
    }
}

/// Evaluates every point of a sweep. Points run in parallel; the curve
/// keeps the sweep order.
pub fn sweep(spec: &SweepSpec, evaluator: &dyn Evaluator) -> Result<Curve> {
    let configs = spec.configs()?;
    let reference = evaluator.reference_accuracy()?;
    let points = configs
        .par_iter()
        .zip(&spec.values)
        .map(|(cfg, &value)| {
            let accuracy = evaluator.accuracy(cfg)?;
            Ok(CurvePoint {
                value,
                accuracy,
                loss_pp: loss_pp(reference, accuracy),
                fingerprint: cfg.fingerprint(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve {
        target: spec.target,
        reference_accuracy: reference,
        points,
    })
}
