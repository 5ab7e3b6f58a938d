//! Double-precision forward pass, the accuracy baseline for every MXInt run.

use super::weights::{patchify, BlockWeights, Linear, ModelWeights, Norm};
use super::Trace;
use crate::error::Result;
use crate::nonlinear::gelu_exact;

fn layernorm(x: &[f64], rows: usize, n: &Norm, eps: f64) -> Vec<f64> {
    let d = n.gamma.len();
    let mut y = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        y.extend(
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) * inv * n.gamma[c] + n.beta[c]),
        );
    }
    y
}

fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// One encoder block over `tokens x dim` input.
pub fn run_block_reference(
    x: &[f64],
    tokens: usize,
    w: &BlockWeights,
    epsilon: f64,
    mut trace: Option<&mut Trace>,
    prefix: &str,
) -> Vec<f64> {
    let d = w.dim();
    let dk = w.head_dim();
    let mut record = |name: &str, rows: usize, cols: usize, v: &[f64]| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(format!("{prefix}{name}"), rows, cols, v.to_vec());
        }
    };
    let xn = layernorm(x, tokens, &w.ln1, epsilon);
    record("ln1", tokens, d, &xn);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = vec![0.0; tokens * d];
    for (h, hw) in w.heads.iter().enumerate() {
        let q = hw.q.forward(&xn, tokens);
        let k = hw.k.forward(&xn, tokens);
        let v = hw.v.forward(&xn, tokens);
        let mut a = vec![0.0; tokens * tokens];
        for i in 0..tokens {
            for j in 0..tokens {
                let dot: f64 = (0..dk).map(|c| q[i * dk + c] * k[j * dk + c]).sum();
                a[i * tokens + j] = dot * scale;
            }
        }
        record(&format!("heads.{h}.scores"), tokens, tokens, &a);
        softmax_rows(&mut a, tokens);
        record(&format!("heads.{h}.softmax"), tokens, tokens, &a);
        for i in 0..tokens {
            for c in 0..dk {
                concat[i * d + h * dk + c] =
                    (0..tokens).map(|j| a[i * tokens + j] * v[j * dk + c]).sum();
            }
        }
    }
    record("attention", tokens, d, &concat);
    let bo = w.wo.forward(&concat, tokens);
    record("proj", tokens, d, &bo);
    let bn = layernorm(&add(&bo, &xn), tokens, &w.ln2, epsilon);
    record("ln2", tokens, d, &bn);
    let u = w.wu.forward(&bn, tokens);
    record("mlp_up", tokens, w.wu.out_features, &u);
    let g: Vec<f64> = u.iter().map(|&v| gelu_exact(v)).collect();
    record("gelu", tokens, w.wu.out_features, &g);
    let dn = w.wd.forward(&g, tokens);
    record("mlp_down", tokens, d, &dn);
    let o = add(&dn, &bn);
    record("out", tokens, d, &o);
    o
}

/// Patch embedding plus class and position embeddings.
pub(crate) fn embed_reference(image: &[f64], m: &ModelWeights) -> Result<Vec<f64>> {
    let c = &m.config;
    let patches = patchify(image, c)?;
    let emb = m.patch_embed.forward(&patches, c.num_patches());
    let mut x = Vec::with_capacity(c.tokens() * c.dim);
    x.extend_from_slice(&m.cls_token);
    x.extend_from_slice(&emb);
    Ok(add(&x, &m.pos_embed))
}

fn head(x: &[f64], l: &Linear) -> Vec<f64> {
    l.forward(&x[..l.in_features], 1)
}

/// Logits of one input image.
pub fn forward_reference(
    image: &[f64],
    m: &ModelWeights,
    epsilon: f64,
    mut trace: Option<&mut Trace>,
) -> Result<Vec<f64>> {
    let c = &m.config;
    let mut x = embed_reference(image, m)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push("embed".into(), c.tokens(), c.dim, x.clone());
    }
    for (l, b) in m.blocks.iter().enumerate() {
        x = run_block_reference(
            &x,
            c.tokens(),
            b,
            epsilon,
            trace.as_deref_mut(),
            &format!("blocks.{l}."),
        );
    }
    let logits = head(&x, &m.head);
    if let Some(t) = trace {
        t.push("logits".into(), 1, logits.len(), logits.clone());
    }
    Ok(logits)
}
