//! Layers with hand-written forward and backward passes.
//!
//! Fully connected and embedding layers can fake-quantize their inputs and
//! weights during training; everything else (softmax, layer norm, GELU and
//! the two attention products) stays in FP32.

mod adam;
mod attention;
mod embedding;
mod linear;
mod model;
pub mod ops;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use attention::MultiHeadAttention;
pub use embedding::QuantizedEmbedding;
pub use linear::QuantizedLinear;
pub use model::{EncoderBlock, LayerNorm, ModelConfig, TransformerEncoderModel};
pub use train::{cross_entropy, evaluate, train, EpochMetrics, TrainConfig, TrainReport};

use crate::tensor::Tensor;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
