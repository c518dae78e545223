//! Quantization-aware training with symmetric 8-bit linear quantization for
//! small transformer encoders, an exact Int8 GEMM / Int32 bias inference
//! runtime, a dynamic-quantization baseline, and a binary model format.

pub mod config;
pub mod error;
pub mod format;
pub mod harness;
pub mod nn;
pub mod par;
pub mod quant;
pub mod runtime;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
