//! Run configuration: one TOML file, every field optional, unknown keys
//! rejected.
//!
//! ```toml
//! [task]
//! seq_len = 16
//! marker_rate = 0.2
//!
//! [model]
//! hidden = 32
//! layers = 2
//!
//! [quant]
//! bits = 8
//! ema_decay = 0.9
//!
//! [train]
//! epochs = 8
//! lr = 0.002
//! seed = 1
//!
//! [compare]
//! seeds = [1, 2, 3, 4, 5]
//!
//! [paths]
//! out_dir = "runs"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::ComparisonConfig;
use crate::nn::{AdamConfig, ModelConfig, TrainConfig};
use crate::quant::QuantParams;
use crate::task::SyntheticTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { hidden: m.hidden, heads: m.heads, ffn: m.ffn, layers: m.layers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub bits: u32,
    pub ema_decay: f32,
}

impl Default for QuantSection {
    fn default() -> Self {
        Self { bits: 8, ema_decay: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub seeds: Vec<u64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { seeds: ComparisonConfig::default().seeds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from(".") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: SyntheticTask,
    pub model: ModelSection,
    pub quant: QuantSection,
    pub train: TrainSection,
    pub compare: CompareSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model_config().validate()?;
        QuantParams::new(self.quant.bits).map_err(|e| Error::Config(format!("quant.bits: {e}")))?;
        if !(self.quant.ema_decay >= 0.0 && self.quant.ema_decay < 1.0) {
            return Err(Error::Config("quant.ema_decay must lie in [0, 1)".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(t.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        if self.compare.seeds.is_empty() {
            return Err(Error::Config("compare.seeds must not be empty".into()));
        }
        let mut seen = self.compare.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.compare.seeds.len() {
            return Err(Error::Config("compare.seeds contains duplicates".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.task.vocab_size,
            seq_len: self.task.seq_len,
            hidden: self.model.hidden,
            heads: self.model.heads,
            ffn: self.model.ffn,
            layers: self.model.layers,
            num_classes: self.task.num_classes,
        }
    }

    pub fn quant_params(&self) -> Result<QuantParams> {
        QuantParams::new(self.quant.bits)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            adam: AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
        }
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            task: self.task,
            model: self.model_config(),
            bits: self.quant.bits,
            ema_decay: self.quant.ema_decay,
            train: self.train_config(),
            seeds: self.compare.seeds.clone(),
        }
    }
}
