use super::linear::QuantizedLinear;
use super::ops::{attention_core, attention_core_backward, AttentionShape};
use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    shape: AttentionShape,
}

/// Multi-head self-attention. The four projections are quantized FC layers;
/// the score and context products have no weights and stay FP32.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: QuantizedLinear,
    pub key: QuantizedLinear,
    pub value: QuantizedLinear,
    pub output: QuantizedLinear,
    heads: usize,
    cache: Option<AttentionCache>,
}

impl MultiHeadAttention {
    pub fn new(
        query: QuantizedLinear,
        key: QuantizedLinear,
        value: QuantizedLinear,
        output: QuantizedLinear,
        heads: usize,
    ) -> Result<Self> {
        let d = query.in_dim();
        for l in [&query, &key, &value, &output] {
            if l.in_dim() != d || l.out_dim() != d {
                return Err(Error::Dimension("attention projections must be square and equal".into()));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!("hidden {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            query,
            key,
            value,
            output,
            heads,
            cache: None,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn hidden(&self) -> usize {
        self.query.in_dim()
    }

    /// `x` is `[batch * seq, hidden]`, sequences stored contiguously.
    pub fn forward(&mut self, x: &Tensor, seq: usize, training: bool) -> Result<Tensor> {
        let shape = AttentionShape::new(x.rows(), self.hidden(), seq, self.heads)?;
        let q = self.query.forward(x, training)?;
        let k = self.key.forward(x, training)?;
        let v = self.value.forward(x, training)?;
        let (ctx, probs) = attention_core(&q, &k, &v, shape)?;
        let out = self.output.forward(&ctx, training)?;
        self.cache = training.then_some(AttentionCache { q, k, v, probs, shape });
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("attention backward called before a training forward".into()))?;
        let dctx = self.output.backward(upstream)?;
        let (dq, dk, dv) =
            attention_core_backward(&dctx, &cache.q, &cache.k, &cache.v, &cache.probs, cache.shape)?;
        let mut dx = self.query.backward(&dq)?;
        dx.add_assign(&self.key.backward(&dk)?)?;
        dx.add_assign(&self.value.backward(&dv)?)?;
        Ok(dx)
    }

    pub(crate) fn linears_mut(&mut self) -> [&mut QuantizedLinear; 4] {
        [&mut self.query, &mut self.key, &mut self.value, &mut self.output]
    }

    pub(crate) fn linears(&self) -> [&QuantizedLinear; 4] {
        [&self.query, &self.key, &self.value, &self.output]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        self.linears_mut()
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.linears_mut().into_iter().for_each(|l| l.clear_cache());
    }
}
