//! Synthetic sequence-classification task.
//!
//! Each sequence starts with a classification token (id 0) followed by
//! `seq_len - 1` random tokens. Token 1 is the trigger and token 2 the
//! blocker; the label is 1 exactly when the trigger occurs more often than
//! the blocker. Labels are drawn first by a fair coin and sequences are
//! resampled until they agree, which keeps the classes balanced.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLS_TOKEN: usize = 0;
pub const TRIGGER_TOKEN: usize = 1;
pub const BLOCKER_TOKEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    /// Per-position probability of the trigger token, and separately of the blocker.
    pub marker_rate: f64,
    pub num_examples: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            seq_len: 16,
            num_classes: 2,
            marker_rate: 0.2,
            num_examples: 10_000,
            seed: 2019,
        }
    }
}

/// The rule itself, recomputed from a sequence.
pub fn label_of(tokens: &[usize]) -> usize {
    let triggers = tokens.iter().filter(|&&t| t == TRIGGER_TOKEN).count();
    let blockers = tokens.iter().filter(|&&t| t == BLOCKER_TOKEN).count();
    usize::from(triggers > blockers)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "task.num_classes must be 2 for the trigger/blocker rule, got {}",
                self.num_classes
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("task.vocab_size must be at least 4".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("task.seq_len must be at least 2".into()));
        }
        if !(self.marker_rate > 0.0 && self.marker_rate < 0.5) {
            return Err(Error::Config("task.marker_rate must lie in (0, 0.5)".into()));
        }
        if self.num_examples < 10 {
            return Err(Error::Config("task.num_examples must be at least 10".into()));
        }
        Ok(())
    }

    fn sample_sequence<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(self.seq_len);
        tokens.push(CLS_TOKEN);
        for _ in 1..self.seq_len {
            let u: f64 = rng.gen();
            let t = if u < self.marker_rate {
                TRIGGER_TOKEN
            } else if u < 2.0 * self.marker_rate {
                BLOCKER_TOKEN
            } else {
                rng.gen_range(BLOCKER_TOKEN + 1..self.vocab_size)
            };
            tokens.push(t);
        }
        tokens
    }

    /// `n` examples, deterministic in `seed`.
    pub fn generate_examples(&self, n: usize) -> Result<Vec<Example>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("cannot generate an empty dataset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..n)
            .map(|_| {
                let label = usize::from(rng.gen_bool(0.5));
                loop {
                    let tokens = self.sample_sequence(&mut rng);
                    if label_of(&tokens) == label {
                        return Example { tokens, label };
                    }
                }
            })
            .collect())
    }

    /// `num_examples` examples split 90/10 into train and dev.
    pub fn generate(&self) -> Result<Dataset> {
        let mut all = self.generate_examples(self.num_examples)?;
        let dev = all.split_off(self.num_examples * 9 / 10);
        Ok(Dataset { train: all, dev })
    }
}
