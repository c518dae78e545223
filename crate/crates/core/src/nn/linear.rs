use rand::Rng;
use rand_distr::Uniform;

use super::Param;
use crate::error::{Error, Result};
use crate::quant::{fake_quantize, fake_quantize_grad, weight_scale, EmaTracker, QuantParams};
use crate::tensor::{gemm_f32, gemm_f32_nt, gemm_f32_tn, Tensor};

#[derive(Debug, Clone)]
struct LinearCache {
    input: Tensor,
    weight: Tensor,
}

/// Fully connected layer `y = x W^T + b` that can fake-quantize its input
/// and weight. The bias is never quantized during training.
#[derive(Debug, Clone)]
pub struct QuantizedLinear {
    pub weight: Param,
    pub bias: Param,
    tracker: EmaTracker,
    params: QuantParams,
    quant_enabled: bool,
    cache: Option<LinearCache>,
}

impl QuantizedLinear {
    pub fn new(weight: Tensor, bias: Tensor, params: QuantParams, tracker: EmaTracker) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Dimension(format!(
                "linear weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            tracker,
            params,
            quant_enabled: false,
            cache: None,
        })
    }

    /// Xavier-uniform weights and zero bias.
    pub fn init<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        params: QuantParams,
        tracker: EmaTracker,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f32).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let w = (0..in_dim * out_dim).map(|_| rng.sample(dist)).collect();
        Self {
            weight: Param::new(Tensor::from_parts(vec![out_dim, in_dim], w)),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            tracker,
            params,
            quant_enabled: false,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
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

    pub fn tracker(&self) -> &EmaTracker {
        &self.tracker
    }

    pub fn set_tracker(&mut self, tracker: EmaTracker) {
        self.tracker = tracker;
    }

    /// Scale applied to the input: the EMA-derived one.
    pub fn input_scale(&self) -> Result<f32> {
        self.tracker.scale(self.params.max_q())
    }

    pub fn weight_scale(&self) -> Result<f32> {
        weight_scale(&self.weight.value, self.params.max_q())
    }

    /// The input and weight as the GEMM sees them, after fake quantization
    /// when enabled. In training mode the tracker is updated with this
    /// batch's `max|x|` before its scale is read.
    fn effective_operands(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, Tensor)> {
        if !self.quant_enabled {
            return Ok((x.clone(), self.weight.value.clone()));
        }
        let m = self.params.max_q();
        if training {
            self.tracker.update(x.max_abs())?;
        }
        let xs = self.tracker.scale(m)?;
        let ws = weight_scale(&self.weight.value, m)?;
        Ok((fake_quantize(x, xs, m)?, fake_quantize(&self.weight.value, ws, m)?))
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "linear expects {} input features, got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let x2 = x.clone().reshape(&[x.rows(), x.cols()])?;
        let (xq, wq) = self.effective_operands(&x2, training)?;
        let mut y = gemm_f32_nt(&xq, &wq)?;
        let out = self.out_dim();
        let b = self.bias.value.data();
        y.data_mut()
            .chunks_mut(out)
            .for_each(|row| row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv));
        self.cache = if training {
            Some(LinearCache { input: xq, weight: wq })
        } else {
            None
        };
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        y.reshape(&shape)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    /// Fake quantization is treated as the identity (straight-through).
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("linear backward called before a training forward".into()))?;
        let rows = cache.input.rows();
        if upstream.len() != rows * self.out_dim() {
            return Err(Error::Dimension(format!(
                "linear backward: upstream {:?} vs {} rows x {} outputs",
                upstream.shape(),
                rows,
                self.out_dim()
            )));
        }
        let up = fake_quantize_grad(upstream).reshape(&[rows, self.out_dim()])?;
        let grad_x = gemm_f32(&up, &cache.weight)?;
        let grad_w = gemm_f32_tn(&up, &cache.input)?;
        self.weight.grad.add_assign(&grad_w)?;
        let out = self.out_dim();
        let gb = self.bias.grad.data_mut();
        for row in up.data().chunks(out) {
            gb.iter_mut().zip(row).for_each(|(g, u)| *g += u);
        }
        let mut shape = upstream.shape().to_vec();
        *shape.last_mut().unwrap() = self.in_dim();
        grad_x.reshape(&shape)
    }

    /// Cached (input, weight) operands from the last training forward.
    pub fn cached_operands(&self) -> Option<(&Tensor, &Tensor)> {
        self.cache.as_ref().map(|c| (&c.input, &c.weight))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
