//! Inference-time action selection, open-loop evaluation against the reward
//! table, and closed-loop rollouts.

mod closed_loop;
mod open_loop;

pub use closed_loop::{rollout_closed_loop, EpisodeResult, RolloutConfig, Termination};
pub use open_loop::{evaluate_open_loop, FrameRecord, OpenLoopReport, Selector};

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, RewardError};
use crate::model::{rasterize, ScorerModel};
use crate::reward::{aggregate_epdms, simulate_pair, max_feasible_progress, RewardConfig, METRIC_COUNT};
use crate::vocab::Trajectory;
use crate::world::{EgoParams, FrameContext};

/// Weights of the policy term and of each scoring head at inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceWeights {
    pub policy: f64,
    pub heads: [f64; METRIC_COUNT],
}

impl Default for InferenceWeights {
    fn default() -> Self {
        Self {
            policy: 1.0,
            heads: [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5],
        }
    }
}

impl InferenceWeights {
    pub fn policy_only() -> Self {
        Self {
            policy: 1.0,
            heads: [0.0; METRIC_COUNT],
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let all = std::iter::once(self.policy).chain(self.heads);
        if all.clone().any(|w| !(w >= 0.0) || !w.is_finite()) || !(all.sum::<f64>() > 0.0) {
            return Err(RewardError::InvalidWeights);
        }
        Ok(())
    }

    fn sum(&self) -> f64 {
        self.policy + self.heads.iter().sum::<f64>()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Combined score of every action: the policy scaled by `n` plus each head, weighted.
pub fn combined_scores(policy: &[f64], heads: ArrayView2<f64>, w: &InferenceWeights) -> Vec<f64> {
    let n = policy.len() as f64;
    let total = w.sum();
    policy
        .iter()
        .zip(heads.outer_iter())
        .map(|(p, row)| {
            let h: f64 = row.iter().zip(&w.heads).map(|(s, wi)| s * wi).sum();
            (w.policy * n * p + h) / total
        })
        .collect()
}

pub fn select_action(policy: &[f64], heads: ArrayView2<f64>, w: &InferenceWeights) -> usize {
    argmax(&combined_scores(policy, heads, w))
}

/// Decides a plan index for a world state; used by the closed-loop harness.
pub trait Planner: Sync {
    fn plan(&self, ctx: &FrameContext, actions: &[Trajectory], key: u64) -> Result<usize, ModelError>;
}

/// The trained scorer with inference weights.
pub struct ModelPlanner<'a> {
    pub model: &'a ScorerModel<f32>,
    pub weights: InferenceWeights,
}

impl Planner for ModelPlanner<'_> {
    fn plan(&self, ctx: &FrameContext, actions: &[Trajectory], _key: u64) -> Result<usize, ModelError> {
        let scene = rasterize(ctx, self.model.config.grid);
        let tokens = crate::model::tokenize_vocab(actions).mapv(|v| v as f32);
        let (out, _) = self.model.forward(&scene, tokens.view())?;
        Ok(select_action(&out.policy(), out.head_scores().view(), &self.weights))
    }
}

/// Simulates every action on the live state and takes the best aggregated score.
pub struct OraclePlanner {
    pub params: EgoParams,
    pub reward: RewardConfig,
}

impl Planner for OraclePlanner {
    fn plan(&self, ctx: &FrameContext, actions: &[Trajectory], _key: u64) -> Result<usize, ModelError> {
        let evals: Vec<_> = actions
            .iter()
            .map(|t| simulate_pair(ctx, t, &self.params, &self.reward.comfort))
            .collect();
        let best = max_feasible_progress(&evals);
        let scores: Vec<f64> = evals
            .iter()
            .map(|e| aggregate_epdms(&e.metrics(best), &self.reward.weights))
            .collect();
        Ok(argmax(&scores))
    }
}

/// Uniform choice, reproducible per `(seed, key)`.
pub struct RandomPlanner {
    pub seed: u64,
}

pub fn random_index(seed: u64, key: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random_range(0..n)
}

impl Planner for RandomPlanner {
    fn plan(&self, _ctx: &FrameContext, actions: &[Trajectory], key: u64) -> Result<usize, ModelError> {
        Ok(random_index(self.seed, key, actions.len()))
    }
}

/// Always the same action.
pub struct FixedPlanner(pub usize);

impl Planner for FixedPlanner {
    fn plan(&self, _ctx: &FrameContext, actions: &[Trajectory], _key: u64) -> Result<usize, ModelError> {
        Ok(self.0.min(actions.len() - 1))
    }
}
