//! Symmetric linear quantization.
//!
//! A value `x` with scale `S` maps to `clamp(round(x * S), -M, M)` where
//! `M = 2^(bits-1) - 1`. There is no zero point. Rounding is half away from
//! zero, so the map is odd: `q(-x) == -q(x)`.
//!
//! Weight scales are `M / max|W|`. Activation scales during training come from
//! an exponential moving average of per-batch `max|x|`; the dynamic variant
//! uses the weight formula on each incoming activation tensor instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{IntTensor8, Tensor};

/// Bit width and the matching largest quantized magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantParams {
    bits: u32,
    max_q: i64,
}

impl QuantParams {
    pub fn new(bits: u32) -> Result<Self> {
        Ok(Self {
            bits,
            max_q: max_quant_value(bits)?,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `M` for this width.
    pub fn max_q(&self) -> i64 {
        self.max_q
    }
}

impl Default for QuantParams {
    fn default() -> Self {
        Self { bits: 8, max_q: 127 }
    }
}

/// `2^(bits-1) - 1`.
pub fn max_quant_value(bits: u32) -> Result<i64> {
    if !(2..=32).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "bit width must be in 2..=32, got {bits}"
        )));
    }
    Ok((1i64 << (bits - 1)) - 1)
}

fn check_scale(scale: f32) -> Result<()> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive and finite, got {scale}"
        )));
    }
    Ok(())
}

fn check_max_q(max_q: i64) -> Result<()> {
    if max_q < 1 {
        return Err(Error::InvalidArgument(format!("M must be >= 1, got {max_q}")));
    }
    Ok(())
}

/// Scalar quantizer; `f32::round` already rounds half away from zero.
#[inline]
pub fn quantize_scalar(x: f32, scale: f32, max_q: i64) -> i64 {
    let m = max_q as f64;
    ((x * scale).round() as f64).clamp(-m, m) as i64
}

/// Quantizes into an `i64` buffer; works for any width up to 32 bits.
pub fn quantize_wide(x: &[f32], scale: f32, max_q: i64) -> Result<Vec<i64>> {
    check_scale(scale)?;
    check_max_q(max_q)?;
    Ok(x.iter().map(|&v| quantize_scalar(v, scale, max_q)).collect())
}

/// Quantizes `x` to Int8. `max_q` must not exceed 127.
pub fn quantize(x: &Tensor, scale: f32, max_q: i64) -> Result<IntTensor8> {
    if max_q > 127 {
        return Err(Error::InvalidArgument(format!(
            "M = {max_q} does not fit in Int8"
        )));
    }
    let q = quantize_wide(x.data(), scale, max_q)?;
    IntTensor8::new(x.shape().to_vec(), q.into_iter().map(|v| v as i8).collect())
}

pub fn dequantize(q: &IntTensor8, scale: f32) -> Result<Tensor> {
    check_scale(scale)?;
    Tensor::new(
        q.shape().to_vec(),
        q.data().iter().map(|&v| v as f32 / scale).collect(),
    )
}

fn max_abs_scale(x: &Tensor, max_q: i64) -> Result<f32> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot take scale of an empty tensor".into()));
    }
    check_max_q(max_q)?;
    Ok(scale_from_max(x.max_abs(), max_q))
}

/// `M / max_abs`, or 1.0 when `max_abs` is zero.
pub fn scale_from_max(max_abs: f32, max_q: i64) -> f32 {
    if max_abs == 0.0 {
        1.0
    } else {
        max_q as f32 / max_abs
    }
}

/// `M / max|w|`; all-zero tensors get 1.0.
pub fn weight_scale(w: &Tensor, max_q: i64) -> Result<f32> {
    max_abs_scale(w, max_q)
}

/// Per-tensor activation scale computed at inference time. Same formula as
/// [`weight_scale`].
pub fn dynamic_scale(x: &Tensor, max_q: i64) -> Result<f32> {
    max_abs_scale(x, max_q)
}

/// Quantize followed by dequantize, staying in FP32.
pub fn fake_quantize(x: &Tensor, scale: f32, max_q: i64) -> Result<Tensor> {
    check_scale(scale)?;
    check_max_q(max_q)?;
    Ok(x.map(|v| quantize_scalar(v, scale, max_q) as f32 / scale))
}

/// Straight-through estimator: the gradient of fake quantization is taken
/// to be the identity, including for inputs that saturated.
pub fn fake_quantize_grad(upstream: &Tensor) -> Tensor {
    upstream.clone()
}

/// Int8 payload with its per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    values: IntTensor8,
    scale: f32,
}

impl QuantizedTensor {
    pub fn new(values: IntTensor8, scale: f32) -> Result<Self> {
        check_scale(scale)?;
        if values.data().contains(&i8::MIN) {
            return Err(Error::InvalidArgument("-128 is outside the symmetric range".into()));
        }
        Ok(Self { values, scale })
    }

    /// Quantizes `w` with its own max-abs scale.
    pub fn from_weights(w: &Tensor, params: QuantParams) -> Result<Self> {
        let scale = weight_scale(w, params.max_q())?;
        Ok(Self {
            values: quantize(w, scale, params.max_q())?,
            scale,
        })
    }

    pub fn values(&self) -> &IntTensor8 {
        &self.values
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn dequantize(&self) -> Tensor {
        self.values
            .to_f32()
            .map(|v| v / self.scale)
    }
}

/// Running EMA of `max|x|` for one activation site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaTracker {
    decay: f32,
    running_max: f32,
    initialized: bool,
}

impl EmaTracker {
    pub const DEFAULT_DECAY: f32 = 0.9;

    pub fn new(decay: f32) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "EMA decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(Self {
            decay,
            running_max: 0.0,
            initialized: false,
        })
    }

    /// Rebuilds a tracker from stored state.
    pub fn from_state(decay: f32, running_max: f32, initialized: bool) -> Result<Self> {
        let mut t = Self::new(decay)?;
        if !running_max.is_finite() || running_max < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "running max must be finite and >= 0, got {running_max}"
            )));
        }
        t.running_max = running_max;
        t.initialized = initialized;
        Ok(t)
    }

    pub fn decay(&self) -> f32 {
        self.decay
    }

    pub fn running_max(&self) -> f32 {
        self.running_max
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// The first observation seeds the average; later ones blend in with
    /// weight `1 - decay`.
    pub fn update(&mut self, batch_max: f32) -> Result<()> {
        if !batch_max.is_finite() || batch_max < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batch max must be finite and >= 0, got {batch_max}"
            )));
        }
        if self.initialized {
            self.running_max = self.decay * self.running_max + (1.0 - self.decay) * batch_max;
        } else {
            self.running_max = batch_max;
            self.initialized = true;
        }
        Ok(())
    }

    /// `M / EMA(max|x|)`, or 1.0 when the average is zero.
    pub fn scale(&self, max_q: i64) -> Result<f32> {
        if !self.initialized {
            return Err(Error::State("activation tracker has seen no data".into()));
        }
        check_max_q(max_q)?;
        Ok(scale_from_max(self.running_max, max_q))
    }
}

impl Default for EmaTracker {
    fn default() -> Self {
        Self {
            decay: Self::DEFAULT_DECAY,
            running_max: 0.0,
            initialized: false,
        }
    }
}

/// Functional form of [`EmaTracker::update`].
pub fn ema_update(mut tracker: EmaTracker, batch_max: f32) -> Result<EmaTracker> {
    tracker.update(batch_max)?;
    Ok(tracker)
}

/// Functional form of [`EmaTracker::scale`].
pub fn activation_scale(tracker: &EmaTracker, max_q: i64) -> Result<f32> {
    tracker.scale(max_q)
}
