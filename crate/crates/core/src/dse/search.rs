use std::fmt;

use serde::{Deserialize, Serialize};

use super::{loss_pp, ElementCounts, Evaluator};
use crate::config::DatapathConfig;
use crate::error::{Error, ErrorKind, Result};
use crate::nonlinear::LutTable;

/// Parameters the search narrows, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchParam {
    WeightM,
    ActivationM,
    LayernormLutBits,
    GeluLutBits,
    SoftmaxRBits,
}

impl SearchParam {
    pub const ORDER: [SearchParam; 5] = [
        SearchParam::WeightM,
        SearchParam::ActivationM,
        SearchParam::LayernormLutBits,
        SearchParam::GeluLutBits,
        SearchParam::SoftmaxRBits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SearchParam::WeightM => "weight_m",
            SearchParam::ActivationM => "activation_m",
            SearchParam::LayernormLutBits => "layernorm_lut_bits",
            SearchParam::GeluLutBits => "gelu_lut_bits",
            SearchParam::SoftmaxRBits => "softmax_r_bits",
        }
    }

    pub fn get(self, cfg: &DatapathConfig) -> u32 {
        match self {
            SearchParam::WeightM => cfg.quant.weight_mantissa_bits,
            SearchParam::ActivationM => cfg.quant.activation_mantissa_bits,
            SearchParam::LayernormLutBits => cfg.nonlinear.layernorm_lut_bits,
            SearchParam::GeluLutBits => cfg.nonlinear.gelu_lut_bits,
            SearchParam::SoftmaxRBits => cfg.nonlinear.softmax_r_bits,
        }
    }

    fn set(self, cfg: &mut DatapathConfig, v: u32) {
        match self {
            SearchParam::WeightM => cfg.quant.weight_mantissa_bits = v,
            SearchParam::ActivationM => cfg.quant.activation_mantissa_bits = v,
            SearchParam::LayernormLutBits => cfg.nonlinear.layernorm_lut_bits = v,
            SearchParam::GeluLutBits => cfg.nonlinear.gelu_lut_bits = v,
            SearchParam::SoftmaxRBits => cfg.nonlinear.softmax_r_bits = v,
        }
    }

    fn is_mantissa(self) -> bool {
        matches!(self, SearchParam::WeightM | SearchParam::ActivationM)
    }
}

impl fmt::Display for SearchParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Budget, starting widths and floors of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub budget_pp: f64,
    /// Supplies everything the search does not touch (block sizes, exponent
    /// bits, GELU domain) and the accumulator floor.
    pub base: DatapathConfig,
    pub max_mantissa_bits: u32,
    pub min_mantissa_bits: u32,
    pub max_lut_bits: u32,
    pub min_lut_bits: u32,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget_pp: 1.0,
            base: DatapathConfig::default(),
            max_mantissa_bits: 16,
            min_mantissa_bits: 2,
            max_lut_bits: 8,
            min_lut_bits: 1,
        }
    }
}

impl SearchOptions {
    pub fn with_budget(budget_pp: f64) -> Self {
        Self {
            budget_pp,
            ..Self::default()
        }
    }

    fn floor(&self, p: SearchParam) -> u32 {
        if p.is_mantissa() {
            self.min_mantissa_bits
        } else {
            self.min_lut_bits
        }
    }

    /// The widest configuration, where the search starts.
    pub fn start(&self) -> DatapathConfig {
        let mut cfg = self.base;
        for p in SearchParam::ORDER {
            let v = if p.is_mantissa() {
                self.max_mantissa_bits
            } else {
                self.max_lut_bits
            };
            p.set(&mut cfg, v);
        }
        self.fix_accumulator(&mut cfg);
        cfg
    }

    fn fix_accumulator(&self, cfg: &mut DatapathConfig) {
        cfg.quant.accumulator_mantissa_bits = self
            .base
            .quant
            .accumulator_mantissa_bits
            .max(cfg.quant.weight_mantissa_bits)
            .max(cfg.quant.activation_mantissa_bits);
    }

    fn validate(&self) -> Result<()> {
        if self.budget_pp.is_nan() || self.budget_pp < 0.0 {
            return Err(Error::Config(format!(
                "budget must be non-negative, got {}",
                self.budget_pp
            )));
        }
        if self.min_mantissa_bits > self.max_mantissa_bits || self.min_lut_bits > self.max_lut_bits
        {
            return Err(Error::Config(
                "search floor above its starting width".into(),
            ));
        }
        let mut lo = self.start();
        for p in SearchParam::ORDER {
            p.set(&mut lo, self.floor(p));
        }
        self.fix_accumulator(&mut lo);
        self.start().validate()?;
        lo.validate()
    }
}

/// Storage bits saved by narrowing `p` by one.
fn saving(p: SearchParam, cfg: &DatapathConfig, counts: &ElementCounts) -> Result<u64> {
    let lut_bits = |b: u32| -> Result<u64> {
        let t = match p {
            SearchParam::LayernormLutBits => LutTable::inv_sqrt(b)?,
            SearchParam::GeluLutBits => LutTable::gelu(b, cfg.nonlinear.gelu_domain)?,
            _ => LutTable::pow2(b)?,
        };
        Ok((1u64 << b) * t.word_bits() as u64)
    };
    let b = p.get(cfg);
    Ok(match p {
        SearchParam::WeightM => counts.weights,
        SearchParam::ActivationM => counts.activations,
        _ => lut_bits(b)?.saturating_sub(lut_bits(b - 1)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchStep {
    pub param: SearchParam,
    pub from: u32,
    pub to: u32,
    pub bits_saved: u64,
    pub loss_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub config: DatapathConfig,
    pub fingerprint: String,
    pub reference_accuracy: f64,
    pub accuracy: f64,
    pub loss_pp: f64,
    pub budget_pp: f64,
    pub steps: Vec<SearchStep>,
    /// Candidate configurations tried, accepted or not.
    pub evaluations: usize,
}

impl SearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results always serialize") + "\n"
    }
}

/// Loss of one configuration, or `None` when the datapath fails on it.
fn try_loss(
    ev: &dyn Evaluator,
    cfg: &DatapathConfig,
    reference: f64,
) -> Result<Option<(f64, f64)>> {
    match ev.accuracy(cfg) {
        Ok(a) => Ok(Some((a, loss_pp(reference, a)))),
        Err(e) if e.kind() == ErrorKind::Numeric => Ok(None),
        Err(e) => Err(e),
    }
}

/// Starting from the widest configuration, repeatedly narrows by one bit the
/// parameter that saves the most storage while keeping the loss within the
/// budget. Ties go to the earlier parameter in [`SearchParam::ORDER`]. Stops
/// when no single narrowing fits.
pub fn greedy_search(
    ev: &dyn Evaluator,
    counts: &ElementCounts,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    opts.validate()?;
    let reference = ev.reference_accuracy()?;
    let mut cfg = opts.start();
    let mut evaluations = 1;
    let (mut accuracy, mut loss) = try_loss(ev, &cfg, reference)?
        .ok_or_else(|| Error::Domain("the starting configuration fails to evaluate".into()))?;
    let mut steps = Vec::new();
    loop {
        let mut candidates = Vec::new();
        for (rank, p) in SearchParam::ORDER.into_iter().enumerate() {
            if p.get(&cfg) > opts.floor(p) {
                candidates.push((saving(p, &cfg, counts)?, rank, p));
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut accepted = false;
        for (bits_saved, _, p) in candidates {
            let mut next = cfg;
            let from = p.get(&cfg);
            p.set(&mut next, from - 1);
            opts.fix_accumulator(&mut next);
            evaluations += 1;
            if let Some((a, l)) = try_loss(ev, &next, reference)? {
                if l <= opts.budget_pp {
                    steps.push(SearchStep {
                        param: p,
                        from,
                        to: from - 1,
                        bits_saved,
                        loss_pp: l,
                    });
                    (cfg, accuracy, loss) = (next, a, l);
                    accepted = true;
                    break;
                }
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(SearchResult {
        config: cfg,
        fingerprint: cfg.fingerprint(),
        reference_accuracy: reference,
        accuracy,
        loss_pp: loss,
        budget_pp: opts.budget_pp,
        steps,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dse::FnEvaluator;

    const COUNTS: ElementCounts = ElementCounts {
        weights: 1000,
        activations: 500,
    };

    fn flat(acc: f64) -> FnEvaluator<impl Fn(&DatapathConfig) -> Result<f64> + Sync> {
        FnEvaluator {
            reference: 1.0,
            f: move |_: &DatapathConfig| Ok(acc),
        }
    }

    #[test]
    fn unlimited_budget_reaches_every_floor() {
        let opts = SearchOptions::with_budget(100.0);
        let r = greedy_search(&flat(0.0), &COUNTS, &opts).unwrap();
        for p in SearchParam::ORDER {
            assert_eq!(p.get(&r.config), opts.floor(p), "{p}");
        }
        assert_eq!(r.config.quant.accumulator_mantissa_bits, 12);
        let start = opts.start();
        let best = SearchParam::ORDER
            .iter()
            .map(|&p| saving(p, &start, &COUNTS).unwrap())
            .max();
        assert_eq!(Some(r.steps[0].bits_saved), best);
    }

    #[test]
    fn zero_budget_with_any_loss_keeps_the_start() {
        let start = SearchOptions::with_budget(0.0).start();
        let ev = FnEvaluator {
            reference: 1.0,
            f: move |c: &DatapathConfig| Ok(if *c == start { 1.0 } else { 0.99 }),
        };
        let r = greedy_search(&ev, &COUNTS, &SearchOptions::with_budget(0.0)).unwrap();
        assert_eq!(r.config, start);
        assert!(r.steps.is_empty());
        assert_eq!(r.evaluations, 1 + SearchParam::ORDER.len());
    }

    #[test]
    fn negative_budget_is_rejected() {
        for b in [-0.5, f64::NAN] {
            let e = greedy_search(&flat(1.0), &COUNTS, &SearchOptions::with_budget(b)).unwrap_err();
            assert!(matches!(e, Error::Config(_)));
        }
    }

    #[test]
    fn result_is_locally_minimal() {
        // Loss grows as widths shrink; each parameter has its own knee.
        let model = |c: &DatapathConfig| {
            let q = &c.quant;
            let n = &c.nonlinear;
            let pen = |b: u32, knee: u32| {
                if b < knee {
                    0.4 * (knee - b) as f64
                } else {
                    0.0
                }
            };
            let loss = pen(q.weight_mantissa_bits, 5)
                + pen(q.activation_mantissa_bits, 7)
                + pen(n.layernorm_lut_bits, 4)
                + pen(n.gelu_lut_bits, 4)
                + pen(n.softmax_r_bits, 2);
            Ok(1.0 - loss / 100.0)
        };
        let ev = FnEvaluator {
            reference: 1.0,
            f: model,
        };
        let opts = SearchOptions::with_budget(1.0);
        let r = greedy_search(&ev, &COUNTS, &opts).unwrap();
        assert!(r.loss_pp <= 1.0);
        for p in SearchParam::ORDER {
            let b = p.get(&r.config);
            if b == opts.floor(p) {
                continue;
            }
            let mut n = r.config;
            p.set(&mut n, b - 1);
            assert!(
                loss_pp(1.0, ev.accuracy(&n).unwrap()) > 1.0,
                "{p} could still shrink"
            );
        }
    }

    #[test]
    fn numeric_failures_count_as_violations() {
        let ev = FnEvaluator {
            reference: 1.0,
            f: |c: &DatapathConfig| {
                if c.quant.activation_mantissa_bits < 10 {
                    Err(Error::DivideByZero)
                } else {
                    Ok(1.0)
                }
            },
        };
        let r = greedy_search(&ev, &COUNTS, &SearchOptions::with_budget(5.0)).unwrap();
        assert_eq!(r.config.quant.activation_mantissa_bits, 10);
        let cfg_err = FnEvaluator {
            reference: 1.0,
            f: |_: &DatapathConfig| Err(Error::Config("x".into())),
        };
        assert!(greedy_search(&cfg_err, &COUNTS, &SearchOptions::default()).is_err());
    }

    #[test]
    fn lut_savings_shrink_with_width() {
        let cfg = SearchOptions::default().start();
        let s8 = saving(SearchParam::GeluLutBits, &cfg, &COUNTS).unwrap();
        let mut c4 = cfg;
        c4.nonlinear.gelu_lut_bits = 4;
        assert!(saving(SearchParam::GeluLutBits, &c4, &COUNTS).unwrap() < s8);
    }
}
