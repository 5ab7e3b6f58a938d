//! Effective run settings: defaults, then the manifest's own configuration,
//! then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use mxvit::vit::Mode;
use mxvit::{DatapathConfig, Error, Result};
use serde::Deserialize;

/// Flags shared by every subcommand. Each one mirrors a key of the config
/// file; quantization keys live under `[quant]`, table keys under
/// `[nonlinear]`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Model manifest, or a directory holding `manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Dataset directory with `labels.csv`.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (or file, for lut-dump).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// mxint | reference
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Seed for dataset subsampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Evaluate a seeded random subset of this many samples.
    #[arg(long, global = true)]
    pub samples: Option<usize>,

    #[arg(long, global = true)]
    pub weight_mantissa_bits: Option<u32>,
    #[arg(long, global = true)]
    pub activation_mantissa_bits: Option<u32>,
    #[arg(long, global = true)]
    pub weight_block_size: Option<usize>,
    #[arg(long, global = true)]
    pub activation_block_size: Option<usize>,
    #[arg(long, global = true)]
    pub exponent_bits: Option<u32>,
    #[arg(long, global = true)]
    pub accumulator_mantissa_bits: Option<u32>,
    #[arg(long, global = true)]
    pub layernorm_lut_bits: Option<u32>,
    #[arg(long, global = true)]
    pub gelu_lut_bits: Option<u32>,
    #[arg(long, global = true)]
    pub gelu_domain: Option<f64>,
    #[arg(long, global = true)]
    pub softmax_r_bits: Option<u32>,
    #[arg(long, global = true)]
    pub exp_frac_bits: Option<u32>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    mode: Option<String>,
    seed: Option<u64>,
    samples: Option<usize>,
    quant: Option<toml::Table>,
    nonlinear: Option<toml::Table>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub manifest: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub seed: u64,
    pub samples: Option<usize>,
    /// `[quant]` and `[nonlinear]` tables of the config file.
    file_sections: (Option<toml::Table>, Option<toml::Table>),
    flags: Common,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        base.insert(k.clone(), v.clone());
    }
}

impl Settings {
    pub fn resolve(flags: &Common) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let mut f: FileConfig = toml::from_str(&text).map_err(|e| Error::Format {
                    what: format!("config {}", path.display()),
                    detail: e.message().to_string(),
                })?;
                let dir = path.parent().unwrap_or(Path::new("."));
                for p in [&mut f.manifest, &mut f.dataset, &mut f.out]
                    .into_iter()
                    .flatten()
                {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
                f
            }
            None => FileConfig::default(),
        };
        let mode = match flags.mode.as_ref().or(file.mode.as_ref()) {
            Some(m) => m.parse()?,
            None => Mode::Mxint,
        };
        Ok(Self {
            manifest: flags.manifest.clone().or(file.manifest),
            dataset: flags.dataset.clone().or(file.dataset),
            out: flags.out.clone().or(file.out),
            mode,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            samples: flags.samples.or(file.samples),
            file_sections: (file.quant, file.nonlinear),
            flags: flags.clone(),
        })
    }

    /// The manifest path, accepting a directory that holds `manifest.json`.
    pub fn manifest_path(&self) -> Result<PathBuf> {
        let p = self.manifest.clone().ok_or_else(|| {
            Error::Config("no model given (--manifest or `manifest` in the config file)".into())
        })?;
        Ok(if p.is_dir() {
            p.join("manifest.json")
        } else {
            p
        })
    }

    pub fn dataset_path(&self) -> Result<PathBuf> {
        self.dataset.clone().ok_or_else(|| {
            Error::Config("no dataset given (--dataset or `dataset` in the config file)".into())
        })
    }

    /// Effective datapath configuration on top of `base` (the defaults or
    /// the manifest's own settings).
    pub fn datapath(&self, base: DatapathConfig) -> Result<DatapathConfig> {
        let toml::Value::Table(mut all) = toml::Value::try_from(base).map_err(config_error)? else {
            unreachable!("configs serialize to tables")
        };
        let section = |all: &mut toml::Table, name: &str| -> toml::Table {
            match all.remove(name) {
                Some(toml::Value::Table(t)) => t,
                _ => toml::Table::new(),
            }
        };
        let mut quant = section(&mut all, "quant");
        let mut nonlinear = section(&mut all, "nonlinear");
        if let Some(t) = &self.file_sections.0 {
            merge(&mut quant, t);
        }
        if let Some(t) = &self.file_sections.1 {
            merge(&mut nonlinear, t);
        }
        let f = &self.flags;
        let set = |t: &mut toml::Table, key: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                t.insert(key.into(), v);
            }
        };
        let int = |v: Option<u32>| v.map(|x| toml::Value::Integer(x as i64));
        let size = |v: Option<usize>| v.map(|x| toml::Value::Integer(x as i64));
        let float = |v: Option<f64>| v.map(toml::Value::Float);
        set(
            &mut quant,
            "weight_mantissa_bits",
            int(f.weight_mantissa_bits),
        );
        set(
            &mut quant,
            "activation_mantissa_bits",
            int(f.activation_mantissa_bits),
        );
        set(&mut quant, "weight_block_size", size(f.weight_block_size));
        set(
            &mut quant,
            "activation_block_size",
            size(f.activation_block_size),
        );
        set(&mut quant, "exponent_bits", int(f.exponent_bits));
        set(
            &mut quant,
            "accumulator_mantissa_bits",
            int(f.accumulator_mantissa_bits),
        );
        set(
            &mut nonlinear,
            "layernorm_lut_bits",
            int(f.layernorm_lut_bits),
        );
        set(&mut nonlinear, "gelu_lut_bits", int(f.gelu_lut_bits));
        set(&mut nonlinear, "gelu_domain", float(f.gelu_domain));
        set(&mut nonlinear, "softmax_r_bits", int(f.softmax_r_bits));
        set(&mut nonlinear, "exp_frac_bits", int(f.exp_frac_bits));
        set(&mut nonlinear, "epsilon", float(f.epsilon));
        all.insert("quant".into(), toml::Value::Table(quant));
        all.insert("nonlinear".into(), toml::Value::Table(nonlinear));
        let cfg: DatapathConfig = toml::Value::Table(all).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
