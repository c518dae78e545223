use rand::Rng;
use rand_distr::Normal;

use super::Param;
use crate::error::{Error, Result};
use crate::quant::{fake_quantize, weight_scale, QuantParams};
use crate::tensor::Tensor;

/// Lookup table that returns fake-quantized rows when quantization is on.
/// The table scale follows the weight rule, recomputed on every lookup.
#[derive(Debug, Clone)]
pub struct QuantizedEmbedding {
    pub table: Param,
    params: QuantParams,
    quant_enabled: bool,
    cached_ids: Option<Vec<usize>>,
}

impl QuantizedEmbedding {
    pub fn new(table: Tensor, params: QuantParams) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "embedding table must be 2-D, got {:?}",
                table.shape()
            )));
        }
        Ok(Self {
            table: Param::new(table),
            params,
            quant_enabled: false,
            cached_ids: None,
        })
    }

    pub fn init<R: Rng>(vocab: usize, dim: usize, std: f32, params: QuantParams, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..vocab * dim).map(|_| rng.sample(dist)).collect();
        Self {
            table: Param::new(Tensor::from_parts(vec![vocab, dim], data)),
            params,
            quant_enabled: false,
            cached_ids: None,
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.value.shape()[1]
    }

    pub fn quant_enabled(&self) -> bool {
        self.quant_enabled
    }

    pub fn set_quant_enabled(&mut self, enabled: bool) {
        self.quant_enabled = enabled;
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn scale(&self) -> Result<f32> {
        weight_scale(&self.table.value, self.params.max_q())
    }

    pub fn forward(&mut self, ids: &[usize], training: bool) -> Result<Tensor> {
        let vocab = self.vocab();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        if ids.is_empty() {
            return Err(Error::Dimension("embedding lookup with no ids".into()));
        }
        let source = if self.quant_enabled {
            fake_quantize(&self.table.value, self.scale()?, self.params.max_q())?
        } else {
            self.table.value.clone()
        };
        let d = self.dim();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(source.row(i));
        }
        self.cached_ids = training.then(|| ids.to_vec());
        Ok(Tensor::from_parts(vec![ids.len(), d], out))
    }

    /// Scatters row gradients back into the FP32 table (straight-through).
    pub fn backward(&mut self, upstream: &Tensor) -> Result<()> {
        let ids = self
            .cached_ids
            .as_ref()
            .ok_or_else(|| Error::State("embedding backward called before a training forward".into()))?;
        let d = self.dim();
        if upstream.len() != ids.len() * d {
            return Err(Error::Dimension("embedding backward: upstream shape".into()));
        }
        let grad = self.table.grad.data_mut();
        for (row, &i) in upstream.data().chunks(d).zip(ids) {
            grad[i * d..(i + 1) * d]
                .iter_mut()
                .zip(row)
                .for_each(|(g, u)| *g += u);
        }
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        self.cached_ids = None;
    }
}
