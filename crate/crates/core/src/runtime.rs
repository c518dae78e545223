//! Integer inference.
//!
//! Exported models store FC weights and embedding tables as Int8 with one
//! FP32 scale each. An FC layer quantizes its FP32 input, runs an
//! Int8 x Int8 -> Int32 GEMM, adds an Int32 bias quantized with scale
//! `S^x * S^W`, and divides the accumulator by that same scale to hand FP32
//! back to layer norm, GELU, softmax and the residual adds.
//!
//! Two flavours share this code. QAT exports freeze `S^x` from the training
//! EMA and pre-quantize the bias. Dynamically quantized models compute `S^x`
//! from each incoming activation tensor and quantize the FP32 bias on the fly.

use crate::error::{Error, Result};
use crate::nn::ops::{attention_core, gelu_forward, layer_norm_forward, AttentionShape};
use crate::nn::{ModelConfig, QuantizedLinear, TransformerEncoderModel};
use crate::par;
use crate::quant::{dynamic_scale, fake_quantize, quantize, quantize_wide, QuantParams, QuantizedTensor};
use crate::tensor::{gemm_f32_nt, gemm_i8_i32_nt, IntTensor32, Tensor};

/// Largest Int32 magnitude used for bias quantization.
pub const BIAS_MAX_Q: i64 = i32::MAX as i64;

/// Where an FC layer's input scale comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationScale {
    /// Frozen from the training-time EMA.
    Static(f32),
    /// Recomputed from every incoming tensor.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrozenBias {
    /// Pre-quantized with `scale = S^x * S^W`.
    Int32 { values: IntTensor32, scale: f32 },
    /// Kept in FP32 and quantized per call once `S^x` is known.
    Float(Tensor),
}

/// An exported FC layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinearFrozen {
    pub weight: QuantizedTensor,
    pub bias: FrozenBias,
    pub input_scale: ActivationScale,
    pub max_q: i64,
}

fn quantize_bias(bias: &Tensor, scale: f32) -> Result<IntTensor32> {
    let q = quantize_wide(bias.data(), scale, BIAS_MAX_Q)?;
    IntTensor32::new(bias.shape().to_vec(), q.into_iter().map(|v| v as i32).collect())
}

impl QuantizedLinearFrozen {
    /// Static export: `S^W` from the final weights, `S^x` from the tracker.
    pub fn export(layer: &QuantizedLinear) -> Result<Self> {
        let params = layer.params();
        let input_scale = layer
            .input_scale()
            .map_err(|_| Error::Export("activation tracker was never updated; train with quantization first".into()))?;
        let weight = QuantizedTensor::from_weights(&layer.weight.value, params)?;
        let bias_scale = input_scale * weight.scale();
        Ok(Self {
            bias: FrozenBias::Int32 {
                values: quantize_bias(&layer.bias.value, bias_scale)?,
                scale: bias_scale,
            },
            weight,
            input_scale: ActivationScale::Static(input_scale),
            max_q: params.max_q(),
        })
    }

    /// Dynamic quantization of a plain FP32 layer; no statistics needed.
    pub fn dynamic(layer: &QuantizedLinear) -> Result<Self> {
        let params = layer.params();
        Ok(Self {
            weight: QuantizedTensor::from_weights(&layer.weight.value, params)?,
            bias: FrozenBias::Float(layer.bias.value.clone()),
            input_scale: ActivationScale::Dynamic,
            max_q: params.max_q(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.values().cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.values().rows()
    }
}

/// Runs one exported FC layer on `x [rows, in]`.
pub fn int8_linear_infer(layer: &QuantizedLinearFrozen, x: &Tensor) -> Result<Tensor> {
    if x.cols() != layer.in_dim() {
        return Err(Error::Dimension(format!(
            "frozen linear expects {} inputs, got {:?}",
            layer.in_dim(),
            x.shape()
        )));
    }
    let x = x.clone().reshape(&[x.rows(), x.cols()])?;
    let input_scale = match layer.input_scale {
        ActivationScale::Static(s) => s,
        ActivationScale::Dynamic => dynamic_scale(&x, layer.max_q)?,
    };
    let xq = quantize(&x, input_scale, layer.max_q)?;
    let acc = gemm_i8_i32_nt(&xq, layer.weight.values())?;
    let computed;
    let (bias_q, bias_scale) = match &layer.bias {
        FrozenBias::Int32 { values, scale } => (values, *scale),
        FrozenBias::Float(b) => {
            let scale = input_scale * layer.weight.scale();
            computed = quantize_bias(b, scale)?;
            (&computed, scale)
        }
    };
    let n = layer.out_dim();
    let mut out = Vec::with_capacity(acc.data().len());
    for row in acc.data().chunks(n) {
        for (&a, &b) in row.iter().zip(bias_q.data()) {
            let total = a
                .checked_add(b)
                .ok_or_else(|| Error::Capacity("Int32 accumulator overflow adding bias".into()))?;
            out.push(total as f32 / bias_scale);
        }
    }
    Ok(Tensor::from_parts(vec![x.rows(), n], out))
}

/// FP32 reference for [`int8_linear_infer`]: the fake-quantized input times
/// the dequantized weight, plus the dequantized Int32 bias.
pub fn fake_quant_linear_infer(layer: &QuantizedLinearFrozen, x: &Tensor) -> Result<Tensor> {
    if x.cols() != layer.in_dim() {
        return Err(Error::Dimension(format!(
            "frozen linear expects {} inputs, got {:?}",
            layer.in_dim(),
            x.shape()
        )));
    }
    let x = x.clone().reshape(&[x.rows(), x.cols()])?;
    let input_scale = match layer.input_scale {
        ActivationScale::Static(s) => s,
        ActivationScale::Dynamic => dynamic_scale(&x, layer.max_q)?,
    };
    let mut y = gemm_f32_nt(&fake_quantize(&x, input_scale, layer.max_q)?, &layer.weight.dequantize())?;
    let bias: Vec<f32> = match &layer.bias {
        FrozenBias::Int32 { values, scale } => values.data().iter().map(|&b| b as f32 / scale).collect(),
        FrozenBias::Float(b) => {
            let scale = input_scale * layer.weight.scale();
            quantize_bias(b, scale)?.data().iter().map(|&b| b as f32 / scale).collect()
        }
    };
    let n = layer.out_dim();
    for row in y.data_mut().chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(&bias) {
            *v += b;
        }
    }
    Ok(y)
}

type LinearKernel = fn(&QuantizedLinearFrozen, &Tensor) -> Result<Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl FrozenLayerNorm {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(layer_norm_forward(x, &self.gain, &self.bias)?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBlock {
    pub query: QuantizedLinearFrozen,
    pub key: QuantizedLinearFrozen,
    pub value: QuantizedLinearFrozen,
    pub output: QuantizedLinearFrozen,
    pub norm1: FrozenLayerNorm,
    pub ffn_in: QuantizedLinearFrozen,
    pub ffn_out: QuantizedLinearFrozen,
    pub norm2: FrozenLayerNorm,
}

impl FrozenBlock {
    pub fn linears(&self) -> [&QuantizedLinearFrozen; 6] {
        [&self.query, &self.key, &self.value, &self.output, &self.ffn_in, &self.ffn_out]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenKind {
    /// QAT export with EMA-frozen activation scales.
    Static,
    /// Dynamic quantization of an FP32 model.
    Dynamic,
}

/// An integer-inference model mirroring [`TransformerEncoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModelFrozen {
    pub config: ModelConfig,
    pub quant: QuantParams,
    pub kind: FrozenKind,
    pub token_embedding: QuantizedTensor,
    pub position_embedding: QuantizedTensor,
    pub embedding_norm: FrozenLayerNorm,
    pub blocks: Vec<FrozenBlock>,
    pub classifier: QuantizedLinearFrozen,
}

fn check_int8(params: QuantParams) -> Result<()> {
    if params.bits() > 8 {
        return Err(Error::Export(format!(
            "integer runtime needs at most 8 bits, model uses {}",
            params.bits()
        )));
    }
    Ok(())
}

fn freeze(
    model: &TransformerEncoderModel,
    kind: FrozenKind,
    linear: fn(&QuantizedLinear) -> Result<QuantizedLinearFrozen>,
) -> Result<QuantizedModelFrozen> {
    let quant = model.quant_params();
    check_int8(quant)?;
    let ln = |l: &crate::nn::LayerNorm| FrozenLayerNorm {
        gain: l.gain.value.clone(),
        bias: l.bias.value.clone(),
    };
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for b in &model.blocks {
        let a = &b.attention;
        blocks.push(FrozenBlock {
            query: linear(&a.query)?,
            key: linear(&a.key)?,
            value: linear(&a.value)?,
            output: linear(&a.output)?,
            norm1: ln(&b.norm1),
            ffn_in: linear(&b.ffn_in)?,
            ffn_out: linear(&b.ffn_out)?,
            norm2: ln(&b.norm2),
        });
    }
    Ok(QuantizedModelFrozen {
        config: *model.config(),
        quant,
        kind,
        token_embedding: QuantizedTensor::from_weights(&model.token_embedding.table.value, quant)?,
        position_embedding: QuantizedTensor::from_weights(&model.position_embedding.table.value, quant)?,
        embedding_norm: ln(&model.embedding_norm),
        blocks,
        classifier: linear(&model.classifier)?,
    })
}

/// Freezes a QAT-trained model. Fails if any activation tracker is empty.
pub fn export(model: &TransformerEncoderModel) -> Result<QuantizedModelFrozen> {
    if !model.trackers_initialized() {
        return Err(Error::Export(
            "model has uninitialized activation trackers; export needs a model trained with quantization".into(),
        ));
    }
    freeze(model, FrozenKind::Static, QuantizedLinearFrozen::export)
}

/// Post-training dynamic quantization of an FP32 model: weights quantized
/// once, activation scales computed per tensor at inference.
pub fn dynamic_quantize(model: &TransformerEncoderModel) -> Result<QuantizedModelFrozen> {
    freeze(model, FrozenKind::Dynamic, QuantizedLinearFrozen::dynamic)
}

fn embed_rows(table: &QuantizedTensor, ids: &[usize]) -> Result<Tensor> {
    let values = table.values();
    let d = values.cols();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &i in ids {
        if i >= values.rows() {
            return Err(Error::Index(format!("token id {i} outside vocabulary of {}", values.rows())));
        }
        out.extend(values.row(i).iter().map(|&q| q as f32 / table.scale()));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], out))
}

impl QuantizedModelFrozen {
    pub fn linears(&self) -> Vec<&QuantizedLinearFrozen> {
        let mut out: Vec<&QuantizedLinearFrozen> =
            self.blocks.iter().flat_map(|b| b.linears()).collect();
        out.push(&self.classifier);
        out
    }

    /// Logits for one sequence of `seq_len` token ids.
    pub fn forward(&self, tokens: &[usize]) -> Result<Vec<f32>> {
        self.forward_with(tokens, int8_linear_infer)
    }

    /// The same forward with every FC layer run by
    /// [`fake_quant_linear_infer`] instead of the integer kernel.
    pub fn simulate(&self, tokens: &[usize]) -> Result<Vec<f32>> {
        self.forward_with(tokens, fake_quant_linear_infer)
    }

    fn forward_with(&self, tokens: &[usize], fc: LinearKernel) -> Result<Vec<f32>> {
        let s = self.config.seq_len;
        if tokens.len() != s {
            return Err(Error::Dimension(format!("expected {s} tokens, got {}", tokens.len())));
        }
        let positions: Vec<usize> = (0..s).collect();
        let mut x = embed_rows(&self.token_embedding, tokens)?;
        x.add_assign(&embed_rows(&self.position_embedding, &positions)?)?;
        let mut x = self.embedding_norm.apply(&x)?;
        for b in &self.blocks {
            let shape = AttentionShape::new(s, self.config.hidden, s, self.config.heads)?;
            let q = fc(&b.query, &x)?;
            let k = fc(&b.key, &x)?;
            let v = fc(&b.value, &x)?;
            let (ctx, _) = attention_core(&q, &k, &v, shape)?;
            let mut h = fc(&b.output, &ctx)?;
            h.add_assign(&x)?;
            let h = b.norm1.apply(&h)?;
            let act = gelu_forward(&fc(&b.ffn_in, &h)?);
            let mut f = fc(&b.ffn_out, &act)?;
            f.add_assign(&h)?;
            x = b.norm2.apply(&f)?;
        }
        let cls = Tensor::from_parts(vec![1, self.config.hidden], x.row(0).to_vec());
        Ok(fc(&self.classifier, &cls)?.into_data())
    }

    /// Logits for many sequences, each run independently.
    pub fn forward_batch(&self, sequences: &[Vec<usize>]) -> Result<Vec<Vec<f32>>> {
        par::map_range(sequences.len(), |i| self.forward(&sequences[i]))
            .into_iter()
            .collect()
    }

    pub fn predict_batch(&self, sequences: &[Vec<usize>]) -> Result<Vec<usize>> {
        Ok(self
            .forward_batch(sequences)?
            .iter()
            .map(|l| argmax(l))
            .collect())
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Functional form of [`QuantizedModelFrozen::forward`].
pub fn integer_forward(model: &QuantizedModelFrozen, tokens: &[usize]) -> Result<Vec<f32>> {
    model.forward(tokens)
}
