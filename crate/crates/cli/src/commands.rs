//! Subcommand implementations. Each returns the JSON document it prints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mxvit::archive::write_archive;
use mxvit::dse::{
    cost_report, greedy_search, loss_pp, sweep, ElementCounts, ModelEvaluator, SearchOptions,
    SweepSpec, SweepTarget,
};
use mxvit::nonlinear::{LutKind, LutTable};
use mxvit::vit::{
    argmax, compare, decode_f32, evaluate, load_model, sha256_hex, Dataset, Manifest, Mode,
    ModelWeights, QuantModel, RawTensor, Runner, Trace,
};
use mxvit::{BlockAxis, DatapathConfig, Error, MxIntTensor, Result, TensorClass};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::settings::Settings;

pub const ARCHIVE_FILE: &str = "weights.mxva";

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Writes `name` under the output directory, if one was given.
fn save(s: &Settings, name: &str, contents: &str) -> Result<Option<PathBuf>> {
    match &s.out {
        Some(dir) => {
            let p = dir.join(name);
            write_file(&p, contents.as_bytes())?;
            Ok(Some(p))
        }
        None => Ok(None),
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

struct Loaded {
    manifest: Manifest,
    weights: ModelWeights,
    cfg: DatapathConfig,
}

fn load(s: &Settings) -> Result<Loaded> {
    let path = s.manifest_path()?;
    let (manifest, weights) = load_model(&path)?;
    let base = DatapathConfig {
        quant: manifest.quant.unwrap_or_default(),
        nonlinear: manifest.nonlinear.unwrap_or_default(),
    };
    let cfg = s.datapath(base)?;
    Ok(Loaded {
        manifest,
        weights,
        cfg,
    })
}

/// The dataset, optionally cut to a seeded random subset kept in file order.
fn load_dataset(s: &Settings, weights: &ModelWeights) -> Result<Dataset> {
    let ds = Dataset::load(&s.dataset_path()?, weights.config.input_len())?;
    match s.samples {
        Some(0) => Err(Error::Config("--samples must be positive".into())),
        Some(n) if n < ds.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut idx = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
            idx.sort_unstable();
            Dataset::new(
                idx.iter().map(|&i| ds.samples[i].clone()).collect(),
                idx.iter().map(|&i| ds.labels[i]).collect(),
            )
        }
        _ => Ok(ds),
    }
}

fn as_matrix(t: &RawTensor) -> (usize, usize) {
    match t.shape.as_slice() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => (
            other[..other.len() - 1].iter().product(),
            other[other.len() - 1],
        ),
    }
}

/// Round-trip statistics of one quantized tensor. Saturated elements are
/// those whose nearest grid point lies outside the mantissa range.
fn tensor_stats(name: &str, raw: &RawTensor, q: &MxIntTensor) -> Value {
    let (rows, cols) = (q.rows(), q.cols());
    let bs = q.block_size();
    let (mut max_abs, mut max_ratio, mut saturated) = (0f64, 0f64, 0usize);
    for r in 0..rows {
        let lane = q.lane(r);
        for c in 0..cols {
            let block = &lane[c / bs];
            let step = (block.exponent() as f64).exp2();
            let x = raw.data[r * cols + c];
            let mant = block.mantissas()[c % bs];
            let err = (x - mant as f64 * step).abs();
            max_abs = max_abs.max(err);
            if (x / step).round_ties_even() != mant as f64 {
                saturated += 1;
            } else {
                max_ratio = max_ratio.max(err / (step / 2.0));
            }
        }
    }
    json!({
        "name": name,
        "shape": raw.shape,
        "mantissa_bits": q.mantissa_bits(),
        "block_size": bs,
        "blocks": q.blocks().len(),
        "max_abs_error": max_abs,
        "max_error_over_half_step": max_ratio,
        "saturated": saturated,
        "within_bound": max_ratio <= 1.0,
    })
}

pub fn quantize(s: &Settings, export_dequantized: Option<&Path>) -> Result<Value> {
    let out = s
        .out
        .clone()
        .ok_or_else(|| Error::Config("quantize needs --out for the archive".into()))?;
    let l = load(s)?;
    let mut archive = Vec::new();
    let mut stats = Vec::new();
    let mut dequantized = BTreeMap::new();
    for (name, raw) in l.weights.to_tensors() {
        let (rows, cols) = as_matrix(&raw);
        let q = MxIntTensor::quantize(
            &raw.data,
            rows,
            cols,
            BlockAxis::Dim1,
            &l.cfg.quant,
            TensorClass::Weight,
        )?;
        stats.push(tensor_stats(&name, &raw, &q));
        dequantized.insert(
            name.clone(),
            RawTensor {
                shape: raw.shape.clone(),
                data: q.dequantize(),
            },
        );
        archive.push((name, q));
    }
    let path = out.join(ARCHIVE_FILE);
    std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    write_archive(&path, &archive)?;
    let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
    if let Some(dir) = export_dequantized {
        Manifest::write(dir, l.manifest.model, &dequantized)?;
    }
    let report = json!({
        "fingerprint": l.cfg.fingerprint(),
        "config": l.cfg,
        "archive": ARCHIVE_FILE,
        "archive_sha256": sha256_hex(&bytes),
        "archive_bytes": bytes.len(),
        "all_within_bound": stats.iter().all(|t| t["within_bound"] == true),
        "tensors": stats,
    });
    save(s, "quantize.json", &pretty(&report))?;
    Ok(report)
}

pub fn run(s: &Settings, input: Option<&Path>, index: usize, with_trace: bool) -> Result<Value> {
    let l = load(s)?;
    let (image, label) = match input {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| io_error(p, e))?;
            (decode_f32(&bytes, &p.display().to_string())?, None)
        }
        None => {
            let ds = Dataset::load(&s.dataset_path()?, l.weights.config.input_len())?;
            if index >= ds.len() {
                return Err(Error::Config(format!(
                    "--index {index} but the dataset holds {} samples",
                    ds.len()
                )));
            }
            (ds.samples[index].clone(), Some(ds.labels[index]))
        }
    };
    let runner = Runner::new(&l.weights, s.mode, &l.cfg)?;
    let mut trace = Trace::default();
    let logits = runner.forward_traced(&image, with_trace.then_some(&mut trace))?;
    let mut report = json!({
        "fingerprint": l.cfg.fingerprint(),
        "mode": s.mode.name(),
        "logits": logits,
        "prediction": argmax(&logits),
        "label": label,
    });
    if with_trace {
        report["trace"] = trace
            .entries
            .iter()
            .map(|e| json!({ "name": e.name, "rows": e.rows, "cols": e.cols, "values": e.values }))
            .collect();
    }
    save(s, "run.json", &pretty(&report))?;
    Ok(report)
}

pub fn evaluate_cmd(s: &Settings) -> Result<Value> {
    let l = load(s)?;
    let ds = load_dataset(s, &l.weights)?;
    let ev = evaluate(&Runner::new(&l.weights, s.mode, &l.cfg)?, &ds)?;
    let mut report = json!({
        "fingerprint": l.cfg.fingerprint(),
        "mode": s.mode.name(),
        "samples": ev.total,
        "correct": ev.correct,
        "accuracy": ev.accuracy(),
    });
    if s.mode == Mode::Mxint {
        let reference = evaluate(&Runner::new(&l.weights, Mode::Reference, &l.cfg)?, &ds)?;
        let cost = cost_report(&l.cfg, &ElementCounts::of_model(&l.weights))?
            .with_accuracy(ev.accuracy(), reference.accuracy());
        report["reference_accuracy"] = json!(reference.accuracy());
        report["loss_pp"] = json!(loss_pp(reference.accuracy(), ev.accuracy()));
        report["cost"] = serde_json::to_value(&cost).expect("reports serialize");
        save(s, "cost.csv", &cost.to_csv())?;
    }
    save(s, "evaluate.json", &pretty(&report))?;
    Ok(report)
}

pub fn sweep_cmd(
    s: &Settings,
    target: SweepTarget,
    values: &[f64],
    range: (u32, u32),
) -> Result<Value> {
    let l = load(s)?;
    let ds = load_dataset(s, &l.weights)?;
    let spec = if values.is_empty() {
        SweepSpec::bits(target, range.0, range.1, l.cfg)
    } else {
        SweepSpec::new(target, values.to_vec(), l.cfg)
    };
    let ev = ModelEvaluator::new(l.weights, ds)?;
    let curve = sweep(&spec, &ev)?;
    save(s, "curve.csv", &curve.to_csv())?;
    save(s, "curve.json", &curve.to_json())?;
    let mut report = serde_json::to_value(&curve).expect("curves serialize");
    report["fingerprint"] = json!(l.cfg.fingerprint());
    Ok(report)
}

pub fn search_cmd(s: &Settings, budget: f64) -> Result<Value> {
    let l = load(s)?;
    let ds = load_dataset(s, &l.weights)?;
    let counts = ElementCounts::of_model(&l.weights);
    let opts = SearchOptions {
        base: l.cfg,
        ..SearchOptions::with_budget(budget)
    };
    let ev = ModelEvaluator::new(l.weights, ds)?;
    let result = greedy_search(&ev, &counts, &opts)?;
    let cost = cost_report(&result.config, &counts)?
        .with_accuracy(result.accuracy, result.reference_accuracy);
    save(s, "search.json", &result.to_json())?;
    save(s, "cost.json", &cost.to_json())?;
    save(s, "cost.csv", &cost.to_csv())?;
    let mut report = serde_json::to_value(&result).expect("results serialize");
    report["cost"] = serde_json::to_value(&cost).expect("reports serialize");
    Ok(report)
}

/// Returns the table text and the fingerprint of the configuration it came
/// from.
pub fn lut_dump(
    s: &Settings,
    kind: LutKind,
    bits: Option<u32>,
    format: &str,
) -> Result<(String, String)> {
    let cfg = match s.manifest {
        Some(_) => load(s)?.cfg,
        None => s.datapath(DatapathConfig::default())?,
    };
    let nl = &cfg.nonlinear;
    let table = match kind {
        LutKind::InvSqrt => LutTable::inv_sqrt(bits.unwrap_or(nl.layernorm_lut_bits))?,
        LutKind::Gelu => LutTable::gelu(bits.unwrap_or(nl.gelu_lut_bits), nl.gelu_domain)?,
        LutKind::Pow2 => LutTable::pow2(bits.unwrap_or(nl.softmax_r_bits))?,
    };
    let text = match format {
        "hex" => table.to_hex(),
        "csv" => table.to_csv(),
        other => {
            return Err(Error::Config(format!(
                "unknown format {other:?} (hex | csv)"
            )))
        }
    };
    if let Some(out) = &s.out {
        write_file(out, text.as_bytes())?;
    }
    Ok((text, cfg.fingerprint()))
}

pub fn compare_cmd(s: &Settings, threshold: f64) -> Result<Value> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::Config(format!(
            "threshold must be a non-negative number, got {threshold}"
        )));
    }
    let l = load(s)?;
    let ds = load_dataset(s, &l.weights)?;
    let model = QuantModel::build(&l.weights, &l.cfg)?;
    let r = compare(&model, &ds, threshold)?;
    let report = json!({
        "fingerprint": l.cfg.fingerprint(),
        "samples": ds.len(),
        "threshold": r.threshold,
        "first_flagged": r.first_flagged,
        "layers": r.layers.iter().map(|x| json!({
            "name": x.name,
            "max_abs": x.max_abs,
            "mean_abs": x.mean_abs,
            "max_rel": x.max_rel,
        })).collect::<Vec<_>>(),
    });
    save(s, "compare.json", &pretty(&report))?;
    Ok(report)
}
