//! Weight manifests and evaluation sets on disk.
//!
//! Tensors are raw little-endian `f32` files, row-major, one per tensor. The
//! manifest is a JSON document:
//!
//! ```json
//! {
//!   "model": { "image_size": 16, "channels": 1, "patch_size": 4, "dim": 32,
//!              "heads": 4, "mlp_dim": 64, "layers": 2, "num_classes": 4 },
//!   "tensors": { "head.weight": { "file": "head.weight.bin", "shape": [4, 32],
//!                                 "sha256": "…" } },
//!   "quant": { … },        // optional
//!   "nonlinear": { … }     // optional
//! }
//! ```
//!
//! A dataset is a directory holding `labels.csv` (`file,label` with a header
//! row) and one raw `f32` sample file per row, shaped `channels x H x W`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{NonlinearConfig, QuantConfig};
use crate::error::{Error, Result};

/// Architecture hyper-parameters of a patch-based classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub layers: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<NonlinearConfig>,
}

/// A tensor read from disk, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decodes little-endian `f32` words.
pub fn decode_f32(bytes: &[u8], what: &str) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::format(
            what,
            format!("{} bytes is not a whole number of f32 words", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes([w[0], w[1], w[2], w[3]]) as f64)
        .collect())
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.model.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_bytes(path)?)
            .map_err(|_| Error::format("manifest", format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }

    /// Reads every tensor listed in the manifest at `path`, checking digests
    /// and sizes. Files are resolved relative to the manifest's directory.
    pub fn load_tensors(&self, path: &Path) -> Result<BTreeMap<String, RawTensor>> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        if self.tensors.is_empty() {
            return Err(Error::Empty(format!("{} lists no tensors", path.display())));
        }
        let mut out = BTreeMap::new();
        for (name, entry) in &self.tensors {
            let file = dir.join(&entry.file);
            let bytes = read_bytes(&file)?;
            let actual = sha256_hex(&bytes);
            if !actual.eq_ignore_ascii_case(&entry.sha256) {
                return Err(Error::Digest {
                    path: file,
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            let data = decode_f32(&bytes, name)?;
            let expected: usize = entry.shape.iter().product();
            if data.len() != expected {
                return Err(Error::Shape(format!(
                    "{name}: shape {:?} needs {expected} values, file holds {}",
                    entry.shape,
                    data.len()
                )));
            }
            out.insert(
                name.clone(),
                RawTensor {
                    shape: entry.shape.clone(),
                    data,
                },
            );
        }
        Ok(out)
    }

    /// Writes tensors and a manifest describing them into `dir`.
    pub fn write(
        dir: &Path,
        model: ModelConfig,
        tensors: &BTreeMap<String, RawTensor>,
    ) -> Result<(PathBuf, Manifest)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = BTreeMap::new();
        for (name, t) in tensors {
            let file = format!("{name}.bin");
            let bytes = encode_f32(&t.data);
            let p = dir.join(&file);
            std::fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
            entries.insert(
                name.clone(),
                TensorEntry {
                    file,
                    shape: t.shape.clone(),
                    sha256: sha256_hex(&bytes),
                },
            );
        }
        let manifest = Manifest {
            model,
            tensors: entries,
            quant: None,
            nonlinear: None,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok((path, manifest))
    }
}

/// Labelled inputs for top-1 evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Loads `dir/labels.csv` and the sample files it names. Every sample
    /// must hold exactly `sample_len` values.
    pub fn load(dir: &Path, sample_len: usize) -> Result<Self> {
        let csv_path = dir.join("labels.csv");
        let text = String::from_utf8(read_bytes(&csv_path)?)
            .map_err(|_| Error::format("labels.csv", "not UTF-8"))?;
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("file,label") => {}
            other => {
                return Err(Error::format(
                    "labels.csv",
                    format!("expected header `file,label`, found {other:?}"),
                ))
            }
        }
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (file, label) = line.split_once(',').ok_or_else(|| {
                Error::format("labels.csv", format!("line {}: missing comma", i + 2))
            })?;
            let label: usize = label.trim().parse().map_err(|_| {
                Error::format("labels.csv", format!("line {}: bad label {label:?}", i + 2))
            })?;
            let path = dir.join(file.trim());
            let data = decode_f32(&read_bytes(&path)?, file)?;
            if data.len() != sample_len {
                return Err(Error::Shape(format!(
                    "{}: {} values, model expects {sample_len}",
                    path.display(),
                    data.len()
                )));
            }
            samples.push(data);
            labels.push(label);
        }
        if samples.is_empty() {
            return Err(Error::Empty(format!(
                "{} lists no samples",
                csv_path.display()
            )));
        }
        Self::new(samples, labels)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut csv = String::from("file,label\n");
        for (i, (s, l)) in self.samples.iter().zip(&self.labels).enumerate() {
            let name = format!("{i:05}.bin");
            let p = dir.join(&name);
            std::fs::write(&p, encode_f32(s)).map_err(|e| Error::io(&p, e))?;
            csv.push_str(&format!("{name},{l}\n"));
        }
        let p = dir.join("labels.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))
    }
}
