//! Exhaustive policy optimization, the comparison trainers and the
//! scoring-head losses.

mod loss;
mod optim;
mod run;

pub use loss::{
    correction_term, epo_logit_loss, epo_loss_and_grads, imitation_logit_loss, imitation_loss_and_grads,
    normalize_advantage, reinforce_logit_loss, reinforce_loss_and_grads, sample_index, scoring_logit_loss,
    scoring_loss_and_grads, AdvantageBatch,
};
pub use optim::{adam_step, AdamConfig};
pub use run::{metrics_csv, train, train_with_progress, EpochRow, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::evalrun::InferenceWeights;
use crate::model::ModelConfig;
use crate::reward::{RewardConfig, METRIC_COUNT};

/// Learning objective for the policy head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    /// Exhaustive likelihood objective on the corrected reward.
    #[serde(rename = "EpoLikelihood_Eb")]
    EpoLikelihoodEb,
    /// Exhaustive likelihood objective on the raw reward.
    #[serde(rename = "EpoLikelihood_E")]
    EpoLikelihoodE,
    /// One sampled action per frame, log-likelihood form, corrected reward.
    ReinforceLogLikelihood,
    /// Cross-entropy towards the best-scoring action.
    ArgmaxImitation,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [
        Paradigm::EpoLikelihoodEb,
        Paradigm::EpoLikelihoodE,
        Paradigm::ReinforceLogLikelihood,
        Paradigm::ArgmaxImitation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::EpoLikelihoodEb => "EpoLikelihood_Eb",
            Paradigm::EpoLikelihoodE => "EpoLikelihood_E",
            Paradigm::ReinforceLogLikelihood => "ReinforceLogLikelihood",
            Paradigm::ArgmaxImitation => "ArgmaxImitation",
        }
    }

    /// Whether the consistency correction enters the advantage.
    pub fn uses_correction(self) -> bool {
        matches!(self, Paradigm::EpoLikelihoodEb | Paradigm::ReinforceLogLikelihood)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Paradigm::ALL.iter().map(|p| p.name()).collect();
                format!("unknown paradigm {s:?}, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Frames per optimizer step, rounded up to whole clips.
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Leading vocabulary entries used as the action space; all when unset.
    pub vocab_prefix: Option<usize>,
    /// Every this-many-th clip is held out.
    pub holdout_every: usize,
    pub model: ModelConfig,
    pub reward: RewardConfig,
    /// Selection rule for the held-out evaluation logged each epoch.
    pub inference: InferenceWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::EpoLikelihoodEb,
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 32,
            lambda: 0.2,
            alpha: 1.0,
            seed: 0,
            vocab_prefix: None,
            holdout_every: 5,
            model: ModelConfig::default(),
            reward: RewardConfig::default(),
            inference: InferenceWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0) || !(self.alpha >= 0.0) {
            return bad(format!("lambda {} and alpha {} must be non-negative", self.lambda, self.alpha));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("lr {} must be positive and weight decay {} non-negative", self.lr, self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.holdout_every < 2 {
            return bad(format!("holdout_every {} must be at least 2", self.holdout_every));
        }
        let prefix = self.prefix(vocab_size);
        if prefix == 0 || prefix > vocab_size {
            return bad(format!("vocab prefix {prefix} must be in 1..={vocab_size}"));
        }
        if self.model.metrics != METRIC_COUNT {
            return bad(format!("model must have {METRIC_COUNT} scoring heads, has {}", self.model.metrics));
        }
        self.model.validate()?;
        self.reward.weights.validate()?;
        self.inference.validate()?;
        Ok(())
    }

    pub fn prefix(&self, vocab_size: usize) -> usize {
        self.vocab_prefix.unwrap_or(vocab_size)
    }

    /// `λ` as it enters the advantage for this paradigm.
    pub fn effective_lambda(&self) -> f64 {
        if self.paradigm.uses_correction() {
            self.lambda
        } else {
            0.0
        }
    }
}

/// Named bundle of dataset, vocabulary and training sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub clips: usize,
    pub vocab_size: usize,
    pub candidates: usize,
    pub train: TrainConfig,
}

impl Preset {
    pub fn tiny() -> Self {
        Self {
            name: "tiny",
            clips: 200,
            vocab_size: 256,
            candidates: 20_000,
            train: TrainConfig {
                model: ModelConfig {
                    d_model: 32,
                    heads: 4,
                    blocks: 2,
                    ff: 64,
                    grid: 32,
                    patch: 8,
                    metrics: METRIC_COUNT,
                },
                ..TrainConfig::default()
            },
        }
    }

    pub fn desk() -> Self {
        Self {
            name: "desk",
            clips: 2000,
            vocab_size: 4096,
            candidates: 20_000,
            train: TrainConfig::default(),
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            name: "paper-scale",
            clips: 2000,
            vocab_size: 16384,
            candidates: 40_000,
            train: TrainConfig {
                lr: 2e-4,
                batch_size: 528,
                epochs: 15,
                ..TrainConfig::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        [Self::tiny(), Self::desk(), Self::paper_scale()]
            .into_iter()
            .find(|p| p.name == name)
    }
}
