#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use mxvit::vit::{load_model, Dataset, ModelWeights};

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn manifest_path() -> PathBuf {
    assets().join("toy_vit/manifest.json")
}

/// The bundled toy model and its evaluation set, loaded once per test binary.
pub fn toy() -> &'static (ModelWeights, Dataset) {
    static TOY: OnceLock<(ModelWeights, Dataset)> = OnceLock::new();
    TOY.get_or_init(|| {
        let (_, w) = load_model(&manifest_path()).expect("bundled model loads");
        let ds = Dataset::load(&assets().join("toy_eval"), w.config.input_len())
            .expect("bundled dataset loads");
        (w, ds)
    })
}

/// Round to nearest, ties to even, onto `2^e`.
pub fn rne(v: f64, e: i32) -> f64 {
    (v / (e as f64).exp2()).round_ties_even() * (e as f64).exp2()
}

/// Independent block quantizer: shared exponent from the largest magnitude,
/// RNE, saturation. Returns (exponent, dequantized values).
pub fn oracle_quantize(values: &[f64], m: u32) -> (i32, Vec<f64>) {
    let max = values.iter().fold(0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return (-127, vec![0.0; values.len()]);
    }
    let hi = ((1i64 << (m - 1)) - 1) as f64;
    let mut e = max.log2().floor() as i32 - (m as i32 - 2);
    // One exponent lower when nothing positive overflows and no negative
    // value lies more than one step below the most negative mantissa.
    let lower = (e as f64 - 1.0).exp2();
    let fits = values.iter().all(|&v| {
        if v > 0.0 {
            (v / lower).round_ties_even() <= hi
        } else {
            v / lower >= -hi - 2.0
        }
    });
    if fits && e > -127 {
        e -= 1;
    }
    let e = e.max(-127);
    let s = (e as f64).exp2();
    let out = values
        .iter()
        .map(|&v| (v / s).round_ties_even().clamp(-hi - 1.0, hi) * s)
        .collect();
    (e, out)
}

/// Compares `actual` with a frozen golden file. With `MXVIT_BLESS=1` the
/// file is rewritten instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("MXVIT_BLESS").is_some() {
        std::fs::write(&path, actual).expect("write golden");
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "golden {name} differs");
}
