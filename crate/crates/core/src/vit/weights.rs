use std::collections::BTreeMap;

use super::io::{ModelConfig, RawTensor};
use crate::error::{Error, Result};

/// Dense `out x in` weights, row-major, and a bias of length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_features: usize,
    pub in_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(
        out_features: usize,
        in_features: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weight.len() != out_features * in_features || bias.len() != out_features {
            return Err(Error::Shape(format!(
                "linear [{out_features}, {in_features}] with {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_features,
            in_features,
            weight,
            bias,
        })
    }

    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        Self {
            out_features,
            in_features,
            weight: vec![0.0; out_features * in_features],
            bias: vec![0.0; out_features],
        }
    }

    /// `x · Wᵀ + b` for `rows x in_features` input.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (n, k) = (self.out_features, self.in_features);
        let mut y = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let xr = &x[r * k..(r + 1) * k];
            for o in 0..n {
                let w = &self.weight[o * k..(o + 1) * k];
                y.push(xr.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.bias[o]);
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Norm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

/// One encoder block: per-head projections, output projection, two norms
/// and the two MLP layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1: Norm,
    pub heads: Vec<HeadWeights>,
    pub wo: Linear,
    pub ln2: Norm,
    pub wu: Linear,
    pub wd: Linear,
}

impl BlockWeights {
    pub fn dim(&self) -> usize {
        self.wo.out_features
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].q.out_features
    }

    /// Checks every projection against `dim`, the head count and `mlp_dim`.
    pub fn validate(&self, dim: usize, mlp_dim: usize) -> Result<()> {
        let h = self.heads.len();
        if h == 0 || !dim.is_multiple_of(h) {
            return Err(Error::Shape(format!("{h} heads for model dim {dim}")));
        }
        let dk = dim / h;
        let check = |step: &str, l: &Linear, out: usize, inp: usize| {
            if l.out_features != out || l.in_features != inp {
                return Err(Error::Shape(format!(
                    "{step}: projection is [{}, {}], expected [{out}, {inp}]",
                    l.out_features, l.in_features
                )));
            }
            Ok(())
        };
        let norm = |step: &str, n: &Norm| {
            if n.gamma.len() != dim || n.beta.len() != dim {
                return Err(Error::Shape(format!(
                    "{step}: norm parameters are not {dim} wide"
                )));
            }
            Ok(())
        };
        norm("step 1 (input norm)", &self.ln1)?;
        for hw in &self.heads {
            check("step 3 (query projection)", &hw.q, dk, dim)?;
            check("step 4 (key projection)", &hw.k, dk, dim)?;
            check("step 5 (value projection)", &hw.v, dk, dim)?;
        }
        check("step 11 (output projection)", &self.wo, dim, dim)?;
        norm("step 12 (residual norm)", &self.ln2)?;
        check("step 13 (MLP up projection)", &self.wu, mlp_dim, dim)?;
        check("step 14 (MLP down projection)", &self.wd, dim, mlp_dim)?;
        Ok(())
    }
}

/// Full classifier: patch embedding, class token, position embedding,
/// encoder blocks and a linear head on the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub patch_embed: Linear,
    pub cls_token: Vec<f64>,
    /// `tokens x dim`, row-major.
    pub pos_embed: Vec<f64>,
    pub blocks: Vec<BlockWeights>,
    pub head: Linear,
}

fn take(tensors: &BTreeMap<String, RawTensor>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = tensors.get(name).ok_or_else(|| Error::Format {
        what: "manifest".into(),
        detail: format!("missing tensor {name}"),
    })?;
    if t.shape != shape {
        return Err(Error::Shape(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(t.data.clone())
}

fn linear(
    tensors: &BTreeMap<String, RawTensor>,
    w: &str,
    b: &str,
    out: usize,
    inp: usize,
) -> Result<Linear> {
    Linear::new(
        out,
        inp,
        take(tensors, w, &[out, inp])?,
        take(tensors, b, &[out])?,
    )
}

impl ModelWeights {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.patch_embed.out_features != c.dim || self.patch_embed.in_features != c.patch_dim() {
            return Err(Error::Shape(
                "patch embedding does not match the model geometry".into(),
            ));
        }
        if self.cls_token.len() != c.dim || self.pos_embed.len() != c.tokens() * c.dim {
            return Err(Error::Shape(
                "class token or position embedding has the wrong size".into(),
            ));
        }
        if self.blocks.len() != c.layers {
            return Err(Error::Shape(format!(
                "{} blocks for {} layers",
                self.blocks.len(),
                c.layers
            )));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            if b.heads.len() != c.heads {
                return Err(Error::Shape(format!(
                    "block {l}: {} heads, expected {}",
                    b.heads.len(),
                    c.heads
                )));
            }
            b.validate(c.dim, c.mlp_dim)
                .map_err(|e| Error::Shape(format!("block {l}: {e}")))?;
        }
        if self.head.out_features != c.num_classes || self.head.in_features != c.dim {
            return Err(Error::Shape(
                "classifier head does not match the model geometry".into(),
            ));
        }
        Ok(())
    }

    /// Assembles a model from named tensors using the bundled naming scheme.
    pub fn from_tensors(config: ModelConfig, t: &BTreeMap<String, RawTensor>) -> Result<Self> {
        config.validate()?;
        let (d, dk, m) = (config.dim, config.head_dim(), config.mlp_dim);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            let norm = |n: &str| -> Result<Norm> {
                Ok(Norm {
                    gamma: take(t, &p(&format!("{n}.gamma")), &[d])?,
                    beta: take(t, &p(&format!("{n}.beta")), &[d])?,
                })
            };
            let heads = (0..config.heads)
                .map(|h| {
                    let proj = |x: &str| {
                        linear(
                            t,
                            &p(&format!("heads.{h}.w{x}")),
                            &p(&format!("heads.{h}.b{x}")),
                            dk,
                            d,
                        )
                    };
                    Ok(HeadWeights {
                        q: proj("q")?,
                        k: proj("k")?,
                        v: proj("v")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(BlockWeights {
                ln1: norm("ln1")?,
                heads,
                wo: linear(t, &p("wo"), &p("bo"), d, d)?,
                ln2: norm("ln2")?,
                wu: linear(t, &p("wu"), &p("bu"), m, d)?,
                wd: linear(t, &p("wd"), &p("bd"), d, m)?,
            });
        }
        let model = Self {
            config,
            patch_embed: linear(
                t,
                "patch_embed.weight",
                "patch_embed.bias",
                d,
                config.patch_dim(),
            )?,
            cls_token: take(t, "cls_token", &[d])?,
            pos_embed: take(t, "pos_embed", &[config.tokens(), d])?,
            blocks,
            head: linear(t, "head.weight", "head.bias", config.num_classes, d)?,
        };
        model.validate()?;
        Ok(model)
    }

    /// The inverse of [`ModelWeights::from_tensors`].
    pub fn to_tensors(&self) -> BTreeMap<String, RawTensor> {
        let mut t = BTreeMap::new();
        let mut put = |name: String, shape: Vec<usize>, data: &[f64]| {
            t.insert(
                name,
                RawTensor {
                    shape,
                    data: data.to_vec(),
                },
            );
        };
        let c = &self.config;
        let lin = |put: &mut Put<'_>, w: String, b: String, l: &Linear| {
            put(w, vec![l.out_features, l.in_features], &l.weight);
            put(b, vec![l.out_features], &l.bias);
        };
        lin(
            &mut put,
            "patch_embed.weight".into(),
            "patch_embed.bias".into(),
            &self.patch_embed,
        );
        put("cls_token".into(), vec![c.dim], &self.cls_token);
        put("pos_embed".into(), vec![c.tokens(), c.dim], &self.pos_embed);
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{l}.{s}");
            put(p("ln1.gamma"), vec![c.dim], &b.ln1.gamma);
            put(p("ln1.beta"), vec![c.dim], &b.ln1.beta);
            for (h, hw) in b.heads.iter().enumerate() {
                for (x, proj) in [("q", &hw.q), ("k", &hw.k), ("v", &hw.v)] {
                    lin(
                        &mut put,
                        p(&format!("heads.{h}.w{x}")),
                        p(&format!("heads.{h}.b{x}")),
                        proj,
                    );
                }
            }
            lin(&mut put, p("wo"), p("bo"), &b.wo);
            put(p("ln2.gamma"), vec![c.dim], &b.ln2.gamma);
            put(p("ln2.beta"), vec![c.dim], &b.ln2.beta);
            lin(&mut put, p("wu"), p("bu"), &b.wu);
            lin(&mut put, p("wd"), p("bd"), &b.wd);
        }
        lin(
            &mut put,
            "head.weight".into(),
            "head.bias".into(),
            &self.head,
        );
        t
    }

    /// Number of weight elements.
    pub fn parameter_count(&self) -> usize {
        self.to_tensors().values().map(|t| t.data.len()).sum()
    }
}

type Put<'a> = dyn FnMut(String, Vec<usize>, &[f64]) + 'a;

/// Splits a `channels x H x W` image into row-major non-overlapping patches,
/// each flattened as `(channel, dy, dx)`.
pub fn patchify(image: &[f64], c: &ModelConfig) -> Result<Vec<f64>> {
    if image.len() != c.input_len() {
        return Err(Error::Shape(format!(
            "input holds {} values, model expects {}",
            image.len(),
            c.input_len()
        )));
    }
    let (s, p) = (c.image_size, c.patch_size);
    let side = s / p;
    let mut out = Vec::with_capacity(image.len());
    for py in 0..side {
        for px in 0..side {
            for ch in 0..c.channels {
                for dy in 0..p {
                    for dx in 0..p {
                        out.push(image[ch * s * s + (py * p + dy) * s + px * p + dx]);
                    }
                }
            }
        }
    }
    Ok(out)
}
