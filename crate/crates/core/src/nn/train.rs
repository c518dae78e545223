use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::{argmax_rows, TransformerEncoderModel};
use crate::error::{Error, Result};
use crate::task::Example;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub quantized: bool,
    pub initial_accuracy: f64,
    pub epochs: Vec<EpochMetrics>,
    pub final_accuracy: f64,
}

/// Mean softmax cross-entropy over the rows of `logits` and its gradient.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    let mut grad = vec![0.0f32; n * c];
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Index(format!("label {y} outside {c} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += (log_sum - row[y]) as f64;
        for j in 0..c {
            let p = (row[j] - log_sum).exp();
            grad[i * c + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    Ok((loss / n as f64, Tensor::from_parts(vec![n, c], grad)))
}

fn flatten(batch: &[&Example]) -> (Vec<usize>, Vec<usize>) {
    let tokens = batch.iter().flat_map(|e| e.tokens.iter().copied()).collect();
    let labels = batch.iter().map(|e| e.label).collect();
    (tokens, labels)
}

/// Eval-mode accuracy of the training graph, in batches of `batch_size`.
pub fn evaluate(model: &mut TransformerEncoderModel, data: &[Example], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let (tokens, labels) = flatten(&refs);
        let preds = model.predict(&tokens)?;
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains with Adam on softmax cross-entropy over the classifier logits.
/// When the model has quantization enabled, every forward fake-quantizes and
/// every backward passes gradients straight through to the FP32 weights.
pub fn train(model: &mut TransformerEncoderModel, data: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("train.batch_size must be positive".into()));
    }
    let quantized = model.quant_enabled();
    // An untrained QAT model has no activation statistics yet; its starting
    // point is scored without fake quantization.
    let initial_accuracy = if quantized && !model.trackers_initialized() {
        model.set_quant_enabled(false);
        let acc = evaluate(model, data, config.batch_size);
        model.set_quant_enabled(true);
        acc?
    } else {
        evaluate(model, data, config.batch_size)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = AdamState::new(config.adam);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let (tokens, labels) = flatten(&batch);
            model.zero_grad();
            let logits = model.forward(&tokens, true)?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() || !logits.all_finite() {
                return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
            }
            correct += argmax_rows(&logits)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            loss_sum += loss * batch.len() as f64;
            model.backward(&grad)?;
            opt.step(&mut model.params_mut())?;
        }
        if model.params_mut().iter().any(|p| !p.value.all_finite()) {
            return Err(Error::Numeric(format!("non-finite weights after epoch {epoch}")));
        }
        epochs.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    model.clear_cache();
    let final_accuracy = if config.epochs == 0 {
        initial_accuracy
    } else {
        evaluate(model, data, config.batch_size)?
    };
    Ok(TrainReport {
        quantized,
        initial_accuracy,
        epochs,
        final_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::zeros(&[2, 4]);
        let (loss, grad) = cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-6);
        assert!((grad.data()[0] - (-0.75 / 2.0)).abs() < 1e-7);
        assert!((grad.data()[1] - 0.125).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        assert!(cross_entropy(&Tensor::zeros(&[1, 2]), &[2]).is_err());
        assert!(cross_entropy(&Tensor::zeros(&[1, 2]), &[0, 1]).is_err());
    }
}
