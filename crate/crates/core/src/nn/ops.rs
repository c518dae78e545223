//! FP32-only operations. None of these are ever quantized.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{gemm_f32, gemm_f32_nt, gemm_f32_tn, Tensor};

pub const LAYER_NORM_EPS: f32 = 1e-12;

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)
const GELU_A: f32 = 0.044_715;

fn check_cols(x: &Tensor, d: usize, what: &str) -> Result<()> {
    if x.cols() != d {
        return Err(Error::Dimension(format!(
            "{what}: expected last dimension {d}, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Saved state from [`layer_norm_forward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
}

/// Normalizes every row over the last dimension, then applies `gain` and `bias`.
pub fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerNormCache)> {
    let d = gain.len();
    check_cols(x, d, "layer_norm")?;
    check_cols(bias, d, "layer_norm bias")?;
    let rows = x.rows();
    let mut normalized = vec![0.0f32; rows * d];
    let mut out = vec![0.0f32; rows * d];
    let mut inv_std = vec![0.0f32; rows];
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = r;
        for j in 0..d {
            let n = (row[j] - mean) * r;
            normalized[i * d + j] = n;
            out[i * d + j] = n * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormCache {
            normalized: Tensor::from_parts(x.shape().to_vec(), normalized),
            inv_std,
        },
    ))
}

/// Returns `grad_x` and accumulates into `grad_gain` / `grad_bias`.
pub fn layer_norm_backward(
    upstream: &Tensor,
    cache: &LayerNormCache,
    gain: &Tensor,
    grad_gain: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<Tensor> {
    let d = gain.len();
    if upstream.shape() != cache.normalized.shape() {
        return Err(Error::Dimension("layer_norm backward: upstream shape".into()));
    }
    let rows = upstream.rows();
    let mut dx = vec![0.0f32; rows * d];
    let mut dn = vec![0.0f32; d];
    for i in 0..rows {
        let dy = upstream.row(i);
        let n = cache.normalized.row(i);
        let mut sum_dn = 0.0f32;
        let mut sum_dn_n = 0.0f32;
        for j in 0..d {
            grad_gain.data_mut()[j] += dy[j] * n[j];
            grad_bias.data_mut()[j] += dy[j];
            dn[j] = dy[j] * gain.data()[j];
            sum_dn += dn[j];
            sum_dn_n += dn[j] * n[j];
        }
        let r = cache.inv_std[i] / d as f32;
        for j in 0..d {
            dx[i * d + j] = r * (d as f32 * dn[j] - sum_dn - n[j] * sum_dn_n);
        }
    }
    Ok(Tensor::from_parts(upstream.shape().to_vec(), dx))
}

/// GELU, tanh approximation.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_forward(x: &Tensor) -> Tensor {
    x.map(gelu)
}

pub fn gelu_backward(upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
    if upstream.shape() != input.shape() {
        return Err(Error::Dimension("gelu backward: shape mismatch".into()));
    }
    let data = upstream
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| g * gelu_derivative(x))
        .collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), data))
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax over the last dimension.
pub fn softmax_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    out.data_mut().chunks_mut(c).for_each(softmax_in_place);
    out
}

/// Backward of [`softmax_forward`] given its output.
pub fn softmax_backward(upstream: &Tensor, output: &Tensor) -> Result<Tensor> {
    if upstream.shape() != output.shape() {
        return Err(Error::Dimension("softmax backward: shape mismatch".into()));
    }
    let c = output.cols();
    let mut dx = vec![0.0f32; output.len()];
    for ((dxr, dy), y) in dx
        .chunks_mut(c)
        .zip(upstream.data().chunks(c))
        .zip(output.data().chunks(c))
    {
        let dot: f32 = dy.iter().zip(y).map(|(a, b)| a * b).sum();
        for j in 0..c {
            dxr[j] = y[j] * (dy[j] - dot);
        }
    }
    Ok(Tensor::from_parts(output.shape().to_vec(), dx))
}

/// Head geometry for attention over a flattened `[batch * seq, hidden]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionShape {
    pub fn new(rows: usize, hidden: usize, seq: usize, heads: usize) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::Dimension(format!(
                "hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::Dimension(format!(
                "{rows} rows do not split into sequences of {seq}"
            )));
        }
        Ok(Self {
            batch: rows / seq,
            seq,
            heads,
            head_dim: hidden / heads,
        })
    }

    fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    fn slice(&self, x: &Tensor, b: usize, h: usize) -> Tensor {
        let (s, dh, d) = (self.seq, self.head_dim, self.hidden());
        let mut out = Vec::with_capacity(s * dh);
        for i in 0..s {
            let start = (b * s + i) * d + h * dh;
            out.extend_from_slice(&x.data()[start..start + dh]);
        }
        Tensor::from_parts(vec![s, dh], out)
    }

    fn scatter(&self, dst: &mut [f32], part: &Tensor, b: usize, h: usize) {
        let (s, dh, d) = (self.seq, self.head_dim, self.hidden());
        for i in 0..s {
            let start = (b * s + i) * d + h * dh;
            dst[start..start + dh].copy_from_slice(part.row(i));
        }
    }
}

/// Scaled dot-product attention over every (sequence, head) pair. Returns
/// the context `[batch * seq, hidden]` and per-pair probability matrices.
pub fn attention_core(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    shape: AttentionShape,
) -> Result<(Tensor, Vec<Tensor>)> {
    let scale = 1.0 / (shape.head_dim as f32).sqrt();
    let pairs = shape.batch * shape.heads;
    let results = par::map_range(pairs, |p| -> Result<(Tensor, Tensor)> {
        let (b, h) = (p / shape.heads, p % shape.heads);
        let qh = shape.slice(q, b, h);
        let kh = shape.slice(k, b, h);
        let vh = shape.slice(v, b, h);
        let scores = gemm_f32_nt(&qh, &kh)?.map(|s| s * scale);
        let probs = softmax_forward(&scores);
        let ctx = gemm_f32(&probs, &vh)?;
        Ok((ctx, probs))
    });
    let mut ctx = vec![0.0f32; q.len()];
    let mut all_probs = Vec::with_capacity(pairs);
    for (p, r) in results.into_iter().enumerate() {
        let (c, probs) = r?;
        shape.scatter(&mut ctx, &c, p / shape.heads, p % shape.heads);
        all_probs.push(probs);
    }
    Ok((Tensor::from_parts(q.shape().to_vec(), ctx), all_probs))
}

/// Gradients of [`attention_core`] with respect to `q`, `k` and `v`.
pub fn attention_core_backward(
    upstream: &Tensor,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[Tensor],
    shape: AttentionShape,
) -> Result<(Tensor, Tensor, Tensor)> {
    let scale = 1.0 / (shape.head_dim as f32).sqrt();
    let pairs = shape.batch * shape.heads;
    let results = par::map_range(pairs, |p| -> Result<(Tensor, Tensor, Tensor)> {
        let (b, h) = (p / shape.heads, p % shape.heads);
        let dctx = shape.slice(upstream, b, h);
        let qh = shape.slice(q, b, h);
        let kh = shape.slice(k, b, h);
        let vh = shape.slice(v, b, h);
        let dprobs = gemm_f32_nt(&dctx, &vh)?;
        let dv = gemm_f32_tn(&probs[p], &dctx)?;
        let dscores = softmax_backward(&dprobs, &probs[p])?.map(|g| g * scale);
        let dq = gemm_f32(&dscores, &kh)?;
        let dk = gemm_f32_tn(&dscores, &qh)?;
        Ok((dq, dk, dv))
    });
    let mut dq = vec![0.0f32; q.len()];
    let mut dk = vec![0.0f32; q.len()];
    let mut dv = vec![0.0f32; q.len()];
    for (p, r) in results.into_iter().enumerate() {
        let (a, b_, c) = r?;
        let (b, h) = (p / shape.heads, p % shape.heads);
        shape.scatter(&mut dq, &a, b, h);
        shape.scatter(&mut dk, &b_, b, h);
        shape.scatter(&mut dv, &c, b, h);
    }
    let s = q.shape().to_vec();
    Ok((
        Tensor::from_parts(s.clone(), dq),
        Tensor::from_parts(s.clone(), dk),
        Tensor::from_parts(s, dv),
    ))
}
