mod common;

use std::sync::OnceLock;

use common::{check_golden, toy};
use mxvit::dse::{
    cost_report, greedy_search, loss_pp, sweep, ElementCounts, Evaluator, ModelEvaluator,
    SearchOptions, SearchParam, SweepSpec, SweepTarget,
};
use mxvit::nonlinear::LutKind;
use mxvit::vit::{evaluate, Mode, Runner};
use mxvit::{DatapathConfig, QuantConfig, TensorClass};

fn evaluator() -> &'static ModelEvaluator {
    static EV: OnceLock<ModelEvaluator> = OnceLock::new();
    EV.get_or_init(|| {
        let (w, ds) = toy();
        ModelEvaluator::new(w.clone(), ds.clone()).unwrap()
    })
}

fn counts() -> ElementCounts {
    ElementCounts::of_model(&toy().0)
}

#[test]
fn one_bit_search_matches_frozen_config() {
    let ev = evaluator();
    let opts = SearchOptions::with_budget(1.0);
    let r = greedy_search(ev, &counts(), &opts).unwrap();
    check_golden("search_budget_1pp.json", &r.to_json());
    assert!(r.loss_pp <= 1.0);

    // No single parameter can drop another bit.
    for p in SearchParam::ORDER {
        let b = p.get(&r.config);
        let floor = if matches!(p, SearchParam::WeightM | SearchParam::ActivationM) {
            opts.min_mantissa_bits
        } else {
            opts.min_lut_bits
        };
        if b == floor {
            continue;
        }
        let mut n = r.config;
        match p {
            SearchParam::WeightM => n.quant.weight_mantissa_bits -= 1,
            SearchParam::ActivationM => n.quant.activation_mantissa_bits -= 1,
            SearchParam::LayernormLutBits => n.nonlinear.layernorm_lut_bits -= 1,
            SearchParam::GeluLutBits => n.nonlinear.gelu_lut_bits -= 1,
            SearchParam::SoftmaxRBits => n.nonlinear.softmax_r_bits -= 1,
        }
        n.quant.accumulator_mantissa_bits = 12
            .max(n.quant.weight_mantissa_bits)
            .max(n.quant.activation_mantissa_bits);
        let loss = ev.accuracy(&n).map(|a| loss_pp(r.reference_accuracy, a));
        assert!(loss.map_or(true, |l| l > 1.0), "{p} could still shrink");
    }
}

#[test]
fn unlimited_budget_reaches_the_floors() {
    let r = greedy_search(evaluator(), &counts(), &SearchOptions::with_budget(100.0)).unwrap();
    let q = &r.config.quant;
    let n = &r.config.nonlinear;
    assert_eq!((q.weight_mantissa_bits, q.activation_mantissa_bits), (2, 2));
    assert_eq!(
        (n.layernorm_lut_bits, n.gelu_lut_bits, n.softmax_r_bits),
        (1, 1, 1)
    );
}

#[test]
fn single_point_sweep_equals_evaluate() {
    let (w, ds) = toy();
    let base = DatapathConfig::default();
    let c = sweep(
        &SweepSpec::bits(SweepTarget::SoftmaxRBits, 2, 2, base),
        evaluator(),
    )
    .unwrap();
    let direct = evaluate(&Runner::new(w, Mode::Mxint, &base).unwrap(), ds).unwrap();
    assert_eq!(c.points.len(), 1);
    assert_eq!(c.points[0].accuracy, direct.accuracy());
    assert_eq!(c.points[0].fingerprint, base.fingerprint());
}

#[test]
fn sweeps_are_byte_identical_across_runs() {
    let (w, ds) = toy();
    let spec = SweepSpec::new(
        SweepTarget::GeluDomain,
        vec![2.0, 4.0],
        DatapathConfig::default(),
    );
    // A fresh evaluator has no cache to lean on.
    let fresh = ModelEvaluator::new(w.clone(), ds.clone()).unwrap();
    let a = sweep(&spec, &fresh).unwrap();
    let b = sweep(&spec, evaluator()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn mantissa_sweep_loses_accuracy_at_two_bits() {
    let c = sweep(
        &SweepSpec::new(
            SweepTarget::ActivationM,
            vec![2.0, 8.0],
            DatapathConfig::default(),
        ),
        evaluator(),
    )
    .unwrap();
    assert!(c.points[0].loss_pp > c.points[1].loss_pp);
    assert!(c.points[1].loss_pp <= 1.0);
}

#[test]
fn toy_cost_report() {
    let (w, _) = toy();
    let counts = counts();
    assert_eq!(counts.weights, w.parameter_count() as u64);
    let r = cost_report(&DatapathConfig::default(), &counts).unwrap();
    assert_eq!(r.lut(LutKind::Gelu).entries, 32);
    assert_eq!(
        r.weights.bits_per_element,
        QuantConfig::default().bits_per_element(TensorClass::Weight)
    );
    let lo = r
        .weights
        .bits_per_element
        .min(r.activations.bits_per_element);
    let hi = r
        .weights
        .bits_per_element
        .max(r.activations.bits_per_element);
    assert!((lo..=hi).contains(&r.blended_bits_per_element));
    assert_eq!(r.blended_density, 32.0 / r.blended_bits_per_element);
}
