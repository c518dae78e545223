use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::MultiHeadAttention;
use super::embedding::QuantizedEmbedding;
use super::linear::QuantizedLinear;
use super::ops::{gelu_backward, gelu_forward, layer_norm_backward, layer_norm_forward, LayerNormCache};
use super::Param;
use crate::error::{Error, Result};
use crate::quant::{EmaTracker, QuantParams};
use crate::tensor::Tensor;

const EMBEDDING_INIT_STD: f32 = 0.5;

/// Architecture of the encoder classifier. `seq_len` counts the leading
/// classification token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            seq_len: 16,
            hidden: 32,
            heads: 2,
            ffn: 64,
            layers: 2,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("layers", self.layers),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.hidden ({}) must be divisible by model.heads ({})",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Layer normalization with learned gain and bias. Never quantized.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
    cache: Option<LayerNormCache>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self::from_params(Tensor::full(&[dim], 1.0), Tensor::zeros(&[dim]))
    }

    pub fn from_params(gain: Tensor, bias: Tensor) -> Self {
        Self {
            gain: Param::new(gain),
            bias: Param::new(bias),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (y, cache) = layer_norm_forward(x, &self.gain.value, &self.bias.value)?;
        self.cache = training.then_some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("layer norm backward called before a training forward".into()))?;
        layer_norm_backward(
            upstream,
            cache,
            &self.gain.value,
            &mut self.gain.grad,
            &mut self.bias.grad,
        )
    }

    fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gain, &mut self.bias]
    }
}

/// Post-norm encoder block: attention, add & norm, GELU feed-forward, add & norm.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn_in: QuantizedLinear,
    pub ffn_out: QuantizedLinear,
    pub norm2: LayerNorm,
    gelu_input: Option<Tensor>,
}

impl EncoderBlock {
    pub fn new(
        attention: MultiHeadAttention,
        norm1: LayerNorm,
        ffn_in: QuantizedLinear,
        ffn_out: QuantizedLinear,
        norm2: LayerNorm,
    ) -> Self {
        Self {
            attention,
            norm1,
            ffn_in,
            ffn_out,
            norm2,
            gelu_input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, seq: usize, training: bool) -> Result<Tensor> {
        let mut h = self.attention.forward(x, seq, training)?;
        h.add_assign(x)?;
        let h = self.norm1.forward(&h, training)?;
        let pre = self.ffn_in.forward(&h, training)?;
        let act = gelu_forward(&pre);
        let mut f = self.ffn_out.forward(&act, training)?;
        f.add_assign(&h)?;
        self.gelu_input = training.then_some(pre);
        self.norm2.forward(&f, training)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let pre = self
            .gelu_input
            .as_ref()
            .ok_or_else(|| Error::State("block backward called before a training forward".into()))?;
        let df = self.norm2.backward(upstream)?;
        let dact = self.ffn_out.backward(&df)?;
        let dpre = gelu_backward(&dact, pre)?;
        let mut dh = self.ffn_in.backward(&dpre)?;
        dh.add_assign(&df)?;
        let dz = self.norm1.backward(&dh)?;
        let mut dx = self.attention.backward(&dz)?;
        dx.add_assign(&dz)?;
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.attention.params_mut();
        out.extend(self.norm1.params_mut());
        out.extend(self.ffn_in.params_mut());
        out.extend(self.ffn_out.params_mut());
        out.extend(self.norm2.params_mut());
        out
    }

    fn clear_cache(&mut self) {
        self.attention.clear_cache();
        self.ffn_in.clear_cache();
        self.ffn_out.clear_cache();
        self.norm1.cache = None;
        self.norm2.cache = None;
        self.gelu_input = None;
    }
}

/// Encoder classifier: token + position embeddings, embedding norm, `layers`
/// encoder blocks, and a linear head on the first position.
#[derive(Debug, Clone)]
pub struct TransformerEncoderModel {
    config: ModelConfig,
    quant: QuantParams,
    ema_decay: f32,
    pub token_embedding: QuantizedEmbedding,
    pub position_embedding: QuantizedEmbedding,
    pub embedding_norm: LayerNorm,
    pub blocks: Vec<EncoderBlock>,
    pub classifier: QuantizedLinear,
    batch_rows: Option<usize>,
}

impl TransformerEncoderModel {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, quant: QuantParams, ema_decay: f32, seed: u64) -> Result<Self> {
        config.validate()?;
        let tracker = EmaTracker::new(ema_decay)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let token_embedding =
            QuantizedEmbedding::init(config.vocab_size, d, EMBEDDING_INIT_STD, quant, &mut rng);
        let position_embedding =
            QuantizedEmbedding::init(config.seq_len, d, EMBEDDING_INIT_STD, quant, &mut rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let mut lin = |i, o| QuantizedLinear::init(i, o, quant, tracker, &mut rng);
            let (q, k, v, o) = (lin(d, d), lin(d, d), lin(d, d), lin(d, d));
            let ffn_in = lin(d, config.ffn);
            let ffn_out = lin(config.ffn, d);
            blocks.push(EncoderBlock::new(
                MultiHeadAttention::new(q, k, v, o, config.heads)?,
                LayerNorm::new(d),
                ffn_in,
                ffn_out,
                LayerNorm::new(d),
            ));
        }
        let classifier = QuantizedLinear::init(d, config.num_classes, quant, tracker, &mut rng);
        Ok(Self {
            config,
            quant,
            ema_decay,
            token_embedding,
            position_embedding,
            embedding_norm: LayerNorm::new(d),
            blocks,
            classifier,
            batch_rows: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn quant_params(&self) -> QuantParams {
        self.quant
    }

    pub fn ema_decay(&self) -> f32 {
        self.ema_decay
    }

    /// Turns fake quantization on or off for every FC and embedding layer.
    pub fn set_quant_enabled(&mut self, enabled: bool) {
        self.token_embedding.set_quant_enabled(enabled);
        self.position_embedding.set_quant_enabled(enabled);
        self.linears_mut()
            .into_iter()
            .for_each(|(_, l)| l.set_quant_enabled(enabled));
    }

    pub fn quant_enabled(&self) -> bool {
        self.classifier.quant_enabled()
    }

    /// True once every FC layer's activation tracker has seen data.
    pub fn trackers_initialized(&self) -> bool {
        self.linears().iter().all(|(_, l)| l.tracker().is_initialized())
    }

    /// Runs `batch` sequences stored back to back in `tokens`; returns
    /// logits `[batch, num_classes]`.
    pub fn forward(&mut self, tokens: &[usize], training: bool) -> Result<Tensor> {
        let s = self.config.seq_len;
        if tokens.is_empty() || tokens.len() % s != 0 {
            return Err(Error::Dimension(format!(
                "{} tokens do not form sequences of length {s}",
                tokens.len()
            )));
        }
        let batch = tokens.len() / s;
        let positions: Vec<usize> = (0..tokens.len()).map(|i| i % s).collect();
        let mut x = self.token_embedding.forward(tokens, training)?;
        x.add_assign(&self.position_embedding.forward(&positions, training)?)?;
        let mut x = self.embedding_norm.forward(&x, training)?;
        for block in &mut self.blocks {
            x = block.forward(&x, s, training)?;
        }
        let d = self.config.hidden;
        let mut cls = Vec::with_capacity(batch * d);
        for b in 0..batch {
            cls.extend_from_slice(x.row(b * s));
        }
        let cls = Tensor::from_parts(vec![batch, d], cls);
        self.batch_rows = training.then_some(tokens.len());
        self.classifier.forward(&cls, training)
    }

    /// Back-propagates `d loss / d logits` through the whole network,
    /// accumulating into every parameter's gradient.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let rows = self
            .batch_rows
            .ok_or_else(|| Error::State("model backward called before a training forward".into()))?;
        let s = self.config.seq_len;
        let d = self.config.hidden;
        let dcls = self.classifier.backward(grad_logits)?;
        let mut dx = vec![0.0f32; rows * d];
        for b in 0..rows / s {
            dx[b * s * d..(b * s + 1) * d].copy_from_slice(dcls.row(b));
        }
        let mut dx = Tensor::from_parts(vec![rows, d], dx);
        for block in self.blocks.iter_mut().rev() {
            dx = block.backward(&dx)?;
        }
        let demb = self.embedding_norm.backward(&dx)?;
        self.token_embedding.backward(&demb)?;
        self.position_embedding.backward(&demb)?;
        Ok(())
    }

    /// Every trainable tensor in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![&mut self.token_embedding.table, &mut self.position_embedding.table];
        out.extend(self.embedding_norm.params_mut());
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.token_embedding.clear_cache();
        self.position_embedding.clear_cache();
        self.embedding_norm.cache = None;
        self.blocks.iter_mut().for_each(EncoderBlock::clear_cache);
        self.classifier.clear_cache();
        self.batch_rows = None;
    }

    /// FC layers with stable names, in forward order.
    pub fn linears(&self) -> Vec<(String, &QuantizedLinear)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, l) in ["q", "k", "v", "o"].iter().zip(b.attention.linears()) {
                out.push((format!("l{i}.attn.{n}"), l));
            }
            out.push((format!("l{i}.ffn.in"), &b.ffn_in));
            out.push((format!("l{i}.ffn.out"), &b.ffn_out));
        }
        out.push(("head".to_string(), &self.classifier));
        out
    }

    pub fn linears_mut(&mut self) -> Vec<(String, &mut QuantizedLinear)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let EncoderBlock { attention, ffn_in, ffn_out, .. } = b;
            for (n, l) in ["q", "k", "v", "o"].iter().zip(attention.linears_mut()) {
                out.push((format!("l{i}.attn.{n}"), l));
            }
            out.push((format!("l{i}.ffn.in"), ffn_in));
            out.push((format!("l{i}.ffn.out"), ffn_out));
        }
        out.push(("head".to_string(), &mut self.classifier));
        out
    }

    /// Layer norms with stable names, in forward order.
    pub fn layer_norms(&self) -> Vec<(String, &LayerNorm)> {
        let mut out = vec![("emb.ln".to_string(), &self.embedding_norm)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("l{i}.ln1"), &b.norm1));
            out.push((format!("l{i}.ln2"), &b.norm2));
        }
        out
    }

    pub fn layer_norms_mut(&mut self) -> Vec<(String, &mut LayerNorm)> {
        let mut out = vec![("emb.ln".to_string(), &mut self.embedding_norm)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let EncoderBlock { norm1, norm2, .. } = b;
            out.push((format!("l{i}.ln1"), norm1));
            out.push((format!("l{i}.ln2"), norm2));
        }
        out
    }

    /// Class predictions in eval mode.
    pub fn predict(&mut self, tokens: &[usize]) -> Result<Vec<usize>> {
        let logits = self.forward(tokens, false)?;
        Ok(argmax_rows(&logits))
    }
}

pub(crate) fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
