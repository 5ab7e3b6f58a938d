mod common;

use proptest::prelude::*;

use common::oracle_quantize;
use mxvit::config::QuantConfig;
use mxvit::dse::{cost_report, ElementCounts};
use mxvit::mxint::{to_minifloat, ExponentRange, MiniFloat, Scaled};
use mxvit::nonlinear::{
    gelu_block, gelu_exact, inv_sqrt, layernorm_mxint, softmax_from_terms, softmax_mxint,
    LayerNormParams, LutKind, LutTable,
};
use mxvit::{BlockAxis, DatapathConfig, MxIntBlock, MxIntTensor, NonlinearConfig, TensorClass};

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, len), -20i32..20).prop_map(|(v, s)| {
        let k = (s as f64).exp2();
        v.into_iter().map(|x| x * k).collect()
    })
}

proptest! {
    #[test]
    fn round_trip_error_is_half_a_step(v in values(16), m in 2u32..=16) {
        let b = MxIntBlock::quantize(&v, m).unwrap();
        let step = (b.exponent() as f64).exp2();
        let top = ((1i64 << (m - 1)) - 1) as f64;
        for (x, (y, &mant)) in v.iter().zip(b.dequantize().iter().zip(b.mantissas())) {
            let saturated = (mant as f64 == top && x / step > top) || (mant as f64 == -top - 1.0 && x / step < -top - 1.0);
            let bound = if saturated { step } else { step / 2.0 };
            prop_assert!((x - y).abs() <= bound, "{x} -> {y} at E={}", b.exponent());
        }
    }

    #[test]
    fn quantizer_matches_oracle(v in values(16), m in 2u32..=12) {
        let b = MxIntBlock::quantize(&v, m).unwrap();
        let (e, deq) = oracle_quantize(&v, m);
        prop_assert_eq!(b.dequantize(), deq);
        if !b.is_zero() {
            prop_assert_eq!(b.exponent(), e);
        }
    }

    #[test]
    fn requantizing_is_idempotent(v in values(16), m in 2u32..=16) {
        let b = MxIntBlock::quantize(&v, m).unwrap();
        let again = MxIntBlock::quantize(&b.dequantize(), m).unwrap();
        prop_assert_eq!(again, b);
    }

    #[test]
    fn requantizing_near_power_of_two_minimum_is_idempotent(
        m in 3u32..=10,
        e in -20i32..20,
        frac in 0.0f64..0.75,
        rest in prop::collection::vec(-1.0f64..1.0, 15),
    ) {
        // The block minimum sits just past -2^(m-2) steps, where the exponent
        // choice is closest to flipping.
        let step = (e as f64).exp2();
        let low = -((1u64 << (m - 2)) as f64 + frac) * step;
        let mut v: Vec<f64> = rest.iter().map(|r| r * low.abs()).collect();
        v.push(low);
        let b = MxIntBlock::quantize(&v, m).unwrap();
        let again = MxIntBlock::quantize(&b.dequantize(), m).unwrap();
        prop_assert_eq!(again, b);
    }

    #[test]
    fn non_zero_blocks_are_normalized(v in values(16), m in 3u32..=16) {
        let b = MxIntBlock::quantize(&v, m).unwrap();
        if !b.is_zero() {
            let top = b.mantissas().iter().map(|x| x.unsigned_abs()).max().unwrap();
            prop_assert!(top >= 1 << (m - 2));
        }
    }

    #[test]
    fn more_bits_never_hurt(v in values(16), m in 2u32..=15) {
        let err = |m| {
            let b = MxIntBlock::quantize(&v, m).unwrap();
            v.iter().zip(b.dequantize()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        prop_assert!(err(m + 1) <= err(m));
    }

    #[test]
    fn layernorm_ignores_a_common_exponent_shift(
        v in prop::collection::vec(-1.0f64..1.0, 32),
        gamma in prop::collection::vec(0.25f64..2.0, 32),
        beta in prop::collection::vec(-1.0f64..1.0, 32),
        c in -8i32..=8,
        bits in 2u32..=8,
    ) {
        let cfg = QuantConfig::default();
        let lut = LutTable::inv_sqrt(bits).unwrap();
        let x = MxIntTensor::quantize(&v, 2, 16, BlockAxis::Dim1, &cfg, TensorClass::Activation).unwrap();
        let p = LayerNormParams::quantize(&gamma[..16], &beta[..16], &cfg).unwrap();
        let base = layernorm_mxint(&x, &p, &lut, &cfg).unwrap();
        let shifted = layernorm_mxint(&x.with_exponent_offset(c), &p, &lut, &cfg).unwrap();
        prop_assert_eq!(base, shifted);
    }

    #[test]
    fn inv_sqrt_even_branch_law(bits in 1u32..=10, frac in 0u64..1024, e in -40i32..40) {
        let lut = LutTable::inv_sqrt(bits).unwrap();
        let fb = 10;
        let mf = MiniFloat { mantissa: (1 << fb) + frac, frac_bits: fb, exponent: e };
        let four = MiniFloat { exponent: e + 2, ..mf };
        let a = inv_sqrt(mf, &lut).unwrap();
        let b = inv_sqrt(four, &lut).unwrap();
        prop_assert_eq!(b, Scaled::new(a.mantissa, a.exponent - 1));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-8.0f64..8.0, 1..40), r in 1u32..=8) {
        let cfg = QuantConfig::default();
        let nl = NonlinearConfig { softmax_r_bits: r, ..NonlinearConfig::default() };
        let lut = LutTable::pow2(r).unwrap();
        let x = MxIntTensor::quantize(&v, 1, v.len(), BlockAxis::Dim1, &cfg, TensorClass::Activation).unwrap();
        let p = softmax_mxint(&x, &lut, &cfg, &nl).unwrap().dequantize();
        prop_assert!(p.iter().all(|&y| (0.0..=1.0).contains(&y)));
        let xs = x.dequantize();
        let i = (0..xs.len()).max_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(b.cmp(&a))).unwrap();
        let top = p.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(p[i], top);
    }

    #[test]
    fn softmax_terms_are_shift_covariant(
        m in prop::collection::vec(1i128..1024, 1..24),
        e in -12i32..0,
        k in -6i32..=6,
    ) {
        let terms: Vec<Scaled> = m.iter().map(|&x| Scaled::new(x, e)).collect();
        let shifted: Vec<Scaled> = m.iter().map(|&x| Scaled::new(x, e + k)).collect();
        prop_assert_eq!(softmax_from_terms(&terms, 20, 8).unwrap(), softmax_from_terms(&shifted, 20, 8).unwrap());
    }

    #[test]
    fn gelu_outer_regions_are_exact(v in values(16), m in 2u32..=12, bits in 1u32..=8) {
        let a = 3.0;
        let lut = LutTable::gelu(bits, a).unwrap();
        let x = MxIntBlock::quantize(&v, m).unwrap();
        let y = gelu_block(&x, &lut, ExponentRange::default()).unwrap();
        for (xi, yi) in x.dequantize().iter().zip(y.dequantize()) {
            if *xi >= a {
                prop_assert_eq!(yi, *xi);
            } else if *xi <= -a {
                prop_assert_eq!(yi, 0.0);
            }
        }
    }

    #[test]
    fn pure_class_density(m in 2u32..=16, e in 2u32..=16, b in 1usize..=512) {
        let cfg = DatapathConfig {
            quant: QuantConfig {
                weight_mantissa_bits: m,
                weight_block_size: b,
                exponent_bits: e,
                accumulator_mantissa_bits: 16,
                ..QuantConfig::default()
            },
            ..DatapathConfig::default()
        };
        let r = cost_report(&cfg, &ElementCounts { weights: 100, activations: 0 }).unwrap();
        prop_assert_eq!(r.weights.density, 32.0 / (m as f64 + e as f64 / b as f64));
        prop_assert_eq!(r.blended_density, r.weights.density);
    }

    #[test]
    fn minifloat_matches_frexp(v in 1i128..(1 << 60), e in -30i32..30, fb in 1u32..=20) {
        let mf = to_minifloat(v, e, fb).unwrap();
        prop_assert!(mf.mantissa >= 1 << fb && mf.mantissa < 2 << fb);
        let x = v as f64 * (e as f64).exp2();
        let rel = (mf.value() - x).abs() / x;
        prop_assert!(rel <= (-(fb as f64) - 1.0).exp2() * (1.0 + 1e-12));
    }
}

#[test]
fn lut_entries_match_their_functions() {
    for bits in 1..=10 {
        for lut in [
            LutTable::inv_sqrt(bits).unwrap(),
            LutTable::gelu(bits, 3.0).unwrap(),
            LutTable::gelu(bits, 1.5).unwrap(),
            LutTable::pow2(bits).unwrap(),
        ] {
            let tol = (-(lut.frac_bits() as f64) - 1.0).exp2();
            for i in 0..lut.len() {
                let x = lut.eval_point_of(i);
                let want = match lut.kind() {
                    LutKind::InvSqrt => 1.0 / x.sqrt(),
                    LutKind::Gelu => gelu_exact(x),
                    LutKind::Pow2 => x.exp2(),
                };
                assert!(
                    (lut.entry_f64(i) - want).abs() <= tol,
                    "{:?} {bits} bits, entry {i}",
                    lut.kind()
                );
            }
        }
    }
}
