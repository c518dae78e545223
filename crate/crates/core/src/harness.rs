//! Baseline vs QAT vs DQ comparison over several seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{evaluate, train, ModelConfig, TrainConfig, TrainReport, TransformerEncoderModel};
use crate::par;
use crate::quant::QuantParams;
use crate::runtime::{dynamic_quantize, export, QuantizedModelFrozen};
use crate::task::{Example, SyntheticTask};

/// `100 * (baseline - quantized) / baseline`, in percent.
pub fn relative_error(baseline: f64, quantized: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline score must be positive, got {baseline}"
        )));
    }
    Ok(100.0 * (baseline - quantized) / baseline)
}

/// Dynamic quantization of a trained FP32 baseline.
pub fn dq_quantize(model: &TransformerEncoderModel) -> Result<QuantizedModelFrozen> {
    dynamic_quantize(model)
}

/// Accuracy of an integer model on `data`.
pub fn frozen_accuracy(model: &QuantizedModelFrozen, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let seqs: Vec<Vec<usize>> = data.iter().map(|e| e.tokens.clone()).collect();
    let preds = model.predict_batch(&seqs)?;
    let correct = preds.iter().zip(data).filter(|(p, e)| **p == e.label).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub task: SyntheticTask,
    pub model: ModelConfig,
    pub bits: u32,
    pub ema_decay: f32,
    /// `train.seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTask::default(),
            model: ModelConfig::default(),
            bits: 8,
            ema_decay: 0.9,
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// Dev accuracies (percent) for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline: f64,
    pub qat: f64,
    pub dq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<SeedResult>,
    pub methods: Vec<MethodSummary>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Fixed-width table: method, mean, std, relative error.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>8} {:>10}", "method", "mean", "std", "rel_err");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<10} {:>8.2}% {:>8.2} {:>9.2}%",
                m.method, m.mean, m.std, m.relative_error
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Everything one seed produces.
pub struct SeedRun {
    pub baseline: TransformerEncoderModel,
    pub baseline_report: TrainReport,
    pub qat: TransformerEncoderModel,
    pub qat_report: TrainReport,
    pub qat_frozen: QuantizedModelFrozen,
    pub dq: QuantizedModelFrozen,
    pub result: SeedResult,
}

/// Trains the FP32 baseline and the QAT model from the same initialization,
/// exports the QAT model, dynamically quantizes the baseline, and scores all
/// three on `dev`.
pub fn run_seed(config: &ComparisonConfig, seed: u64, train_set: &[Example], dev: &[Example]) -> Result<SeedRun> {
    let quant = QuantParams::new(config.bits)?;
    let train_cfg = TrainConfig { seed, ..config.train };
    let init = TransformerEncoderModel::new(config.model, quant, config.ema_decay, seed)?;

    let mut baseline = init.clone();
    let baseline_report = train(&mut baseline, train_set, &train_cfg)?;
    let mut qat = init;
    qat.set_quant_enabled(true);
    let qat_report = train(&mut qat, train_set, &train_cfg)?;

    let qat_frozen = export(&qat)?;
    let dq = dq_quantize(&baseline)?;
    let result = SeedResult {
        seed,
        baseline: 100.0 * evaluate(&mut baseline, dev, config.train.batch_size)?,
        qat: 100.0 * frozen_accuracy(&qat_frozen, dev)?,
        dq: 100.0 * frozen_accuracy(&dq, dev)?,
    };
    Ok(SeedRun {
        baseline,
        baseline_report,
        qat,
        qat_report,
        qat_frozen,
        dq,
        result,
    })
}

pub fn run_comparison(config: &ComparisonConfig) -> Result<ComparisonReport> {
    if config.seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one seed".into()));
    }
    if config.model.vocab_size != config.task.vocab_size || config.model.seq_len != config.task.seq_len {
        return Err(Error::Config("model vocab/seq_len must match the task".into()));
    }
    let data = config.task.generate()?;
    let runs = par::map_range(config.seeds.len(), |i| {
        let seed = config.seeds[i];
        run_seed(config, seed, &data.train, &data.dev)
            .map(|r| r.result)
            .map_err(|e| Error::Seed { seed, source: Box::new(e) })
    });
    let seeds = runs.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(seeds)
}

/// Aggregates per-seed results into a report.
pub fn summarize(seeds: Vec<SeedResult>) -> Result<ComparisonReport> {
    let pick = |f: fn(&SeedResult) -> f64| seeds.iter().map(f).collect::<Vec<_>>();
    let (base_mean, base_std) = mean_std(&pick(|s| s.baseline));
    let mut methods = vec![MethodSummary {
        method: "baseline".into(),
        mean: base_mean,
        std: base_std,
        relative_error: 0.0,
    }];
    for (name, f) in [("qat", (|s: &SeedResult| s.qat) as fn(&SeedResult) -> f64), ("dq", |s| s.dq)] {
        let (mean, std) = mean_std(&pick(f));
        methods.push(MethodSummary {
            method: name.into(),
            mean,
            std,
            relative_error: relative_error(base_mean, mean)?,
        });
    }
    Ok(ComparisonReport { seeds, methods })
}
