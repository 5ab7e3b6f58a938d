//! The MXInt forward pass. Weights are quantized once in
//! [`QuantModel::build`]; every intermediate is an [`MxIntTensor`].

use super::weights::{patchify, BlockWeights, Linear, ModelWeights, Norm};
use super::Trace;
use crate::config::{DatapathConfig, QuantConfig, TensorClass};
use crate::error::{Error, Result};
use crate::linear::{
    mxint_linear, mxint_linear_exact, mxint_matmul_exact, quantize_constant, requantize,
    residual_add, Accumulator, LinearParams,
};
use crate::mxint::{BlockAxis, MxIntTensor, Scaled};
use crate::nonlinear::{
    gelu_mxint, layernorm_mxint, softmax_mxint, LayerNormParams, NonlinearUnits,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantHead {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantBlock {
    pub ln1: LayerNormParams,
    pub heads: Vec<QuantHead>,
    pub wo: LinearParams,
    pub ln2: LayerNormParams,
    pub wu: LinearParams,
    pub wd: LinearParams,
}

fn q_linear(l: &Linear, cfg: &QuantConfig) -> Result<LinearParams> {
    LinearParams::quantize(&l.weight, l.out_features, l.in_features, Some(&l.bias), cfg)
}

fn q_norm(n: &Norm, cfg: &QuantConfig) -> Result<LayerNormParams> {
    LayerNormParams::quantize(&n.gamma, &n.beta, cfg)
}

impl QuantBlock {
    pub fn quantize(w: &BlockWeights, cfg: &QuantConfig) -> Result<Self> {
        Ok(Self {
            ln1: q_norm(&w.ln1, cfg)?,
            heads: w
                .heads
                .iter()
                .map(|h| {
                    Ok(QuantHead {
                        q: q_linear(&h.q, cfg)?,
                        k: q_linear(&h.k, cfg)?,
                        v: q_linear(&h.v, cfg)?,
                    })
                })
                .collect::<Result<_>>()?,
            wo: q_linear(&w.wo, cfg)?,
            ln2: q_norm(&w.ln2, cfg)?,
            wu: q_linear(&w.wu, cfg)?,
            wd: q_linear(&w.wd, cfg)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.wo.out_features()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].q.out_features()
    }
}

/// `1/sqrt(d_k)`: an exact power of two when `d_k` is a power of four,
/// otherwise an accumulator-width constant.
pub fn attention_scale(head_dim: usize, cfg: &QuantConfig) -> Result<Scaled> {
    if head_dim == 0 {
        return Err(Error::Shape("head dimension is zero".into()));
    }
    if head_dim.is_power_of_two() && head_dim.trailing_zeros().is_multiple_of(2) {
        return Ok(Scaled::new(1, -(head_dim.trailing_zeros() as i32 / 2)));
    }
    quantize_constant(1.0 / (head_dim as f64).sqrt(), cfg)
}

fn mul(a: Scaled, b: Scaled) -> Scaled {
    Scaled::new(a.mantissa * b.mantissa, a.exponent + b.exponent)
}

/// One encoder block over a row-blocked `tokens x dim` activation.
pub fn run_block_mxint(
    x: &MxIntTensor,
    w: &QuantBlock,
    units: &NonlinearUnits,
    cfg: &DatapathConfig,
    mut trace: Option<&mut Trace>,
    prefix: &str,
) -> Result<MxIntTensor> {
    let q = &cfg.quant;
    let (t, d, dk) = (x.rows(), w.dim(), w.head_dim());
    if x.cols() != d {
        return Err(Error::Shape(format!(
            "step 1: block input has {} features, weights expect {d}",
            x.cols()
        )));
    }
    let mut record = |name: &str, v: &MxIntTensor| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(
                format!("{prefix}{name}"),
                v.rows(),
                v.cols(),
                v.dequantize(),
            );
        }
    };
    let xn = layernorm_mxint(x, &w.ln1, &units.inv_sqrt, q)?;
    record("ln1", &xn);
    let scale = attention_scale(dk, q)?;
    let mut context = vec![Scaled::ZERO; t * d];
    for (h, hw) in w.heads.iter().enumerate() {
        let qh = mxint_linear(&xn, &hw.q, q)?;
        let kh = mxint_linear(&xn, &hw.k, q)?;
        // Values are blocked along tokens, the reduction axis of step 8.
        let vh = requantize(
            &mxint_linear_exact(&xn, &hw.v, q)?,
            t,
            dk,
            BlockAxis::Dim0,
            q,
        )?;
        let scores: Vec<Scaled> = mxint_matmul_exact(&qh, &kh.transpose(), q)?
            .into_iter()
            .map(|s| mul(s, scale))
            .collect();
        let a = requantize(&scores, t, t, BlockAxis::Dim1, q)?;
        record(&format!("heads.{h}.scores"), &a);
        let p = softmax_mxint(&a, &units.pow2, q, &cfg.nonlinear)?;
        record(&format!("heads.{h}.softmax"), &p);
        let bh = mxint_matmul_exact(&p, &vh, q)?;
        for i in 0..t {
            context[i * d + h * dk..i * d + (h + 1) * dk]
                .copy_from_slice(&bh[i * dk..(i + 1) * dk]);
        }
    }
    let bc = requantize(&context, t, d, BlockAxis::Dim1, q)?;
    record("attention", &bc);
    let bo = mxint_linear(&bc, &w.wo, q)?;
    record("proj", &bo);
    let bn = layernorm_mxint(&residual_add(&bo, &xn, q)?, &w.ln2, &units.inv_sqrt, q)?;
    record("ln2", &bn);
    let u = mxint_linear(&bn, &w.wu, q)?;
    record("mlp_up", &u);
    let g = gelu_mxint(&u, &units.gelu)?;
    record("gelu", &g);
    let dn = mxint_linear(&g, &w.wd, q)?;
    record("mlp_down", &dn);
    let o = residual_add(&dn, &bn, q)?;
    record("out", &o);
    Ok(o)
}

/// A model with every parameter quantized for one datapath configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    pub weights: ModelWeights,
    pub config: DatapathConfig,
    pub units: NonlinearUnits,
    pub patch_embed: LinearParams,
    pub cls_token: MxIntTensor,
    pub pos_embed: MxIntTensor,
    pub blocks: Vec<QuantBlock>,
    pub head: LinearParams,
}

impl QuantModel {
    pub fn build(weights: &ModelWeights, config: &DatapathConfig) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let q = &config.quant;
        let c = &weights.config;
        Ok(Self {
            weights: weights.clone(),
            config: *config,
            units: NonlinearUnits::build(&config.nonlinear)?,
            patch_embed: q_linear(&weights.patch_embed, q)?,
            cls_token: MxIntTensor::quantize(
                &weights.cls_token,
                1,
                c.dim,
                BlockAxis::Dim1,
                q,
                TensorClass::Weight,
            )?,
            pos_embed: MxIntTensor::quantize(
                &weights.pos_embed,
                c.tokens(),
                c.dim,
                BlockAxis::Dim1,
                q,
                TensorClass::Weight,
            )?,
            blocks: weights
                .blocks
                .iter()
                .map(|b| QuantBlock::quantize(b, q))
                .collect::<Result<_>>()?,
            head: q_linear(&weights.head, q)?,
        })
    }

    /// Quantized token embeddings of one image.
    pub fn embed(&self, image: &[f64]) -> Result<MxIntTensor> {
        let c = &self.weights.config;
        let q = &self.config.quant;
        let patches = patchify(image, c)?;
        let px = MxIntTensor::quantize(
            &patches,
            c.num_patches(),
            c.patch_dim(),
            BlockAxis::Dim1,
            q,
            TensorClass::Activation,
        )?;
        let emb = mxint_linear_exact(&px, &self.patch_embed, q)?;
        let width = q.accumulator_width();
        let d = c.dim;
        MxIntTensor::from_fn(
            c.tokens(),
            d,
            BlockAxis::Dim1,
            q,
            TensorClass::Activation,
            |r, col| {
                let tok = if r == 0 {
                    self.cls_token.get(0, col)
                } else {
                    emb[(r - 1) * d + col]
                };
                Ok(
                    Accumulator::sum(&[tok, self.pos_embed.get(r, col)], width, r * d + col)?
                        .scaled(),
                )
            },
        )
    }

    /// Logits of one input image; the classifier reads the class token.
    pub fn forward(&self, image: &[f64], mut trace: Option<&mut Trace>) -> Result<Vec<f64>> {
        let mut x = self.embed(image)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push("embed".into(), x.rows(), x.cols(), x.dequantize());
        }
        for (l, b) in self.blocks.iter().enumerate() {
            x = run_block_mxint(
                &x,
                b,
                &self.units,
                &self.config,
                trace.as_deref_mut(),
                &format!("blocks.{l}."),
            )?;
        }
        let logits: Vec<f64> =
            mxint_linear_exact(&x.row_range(0, 1)?, &self.head, &self.config.quant)?
                .into_iter()
                .map(Scaled::to_f64)
                .collect();
        if let Some(t) = trace {
            t.push("logits".into(), 1, logits.len(), logits.clone());
        }
        Ok(logits)
    }
}
