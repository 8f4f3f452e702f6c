//! The trajectory scorer: scene rasterization, trajectory tokens, a
//! cross-attention decoder with policy and scoring heads, exact reverse-mode
//! gradients and checkpoints.

mod checkpoint;
mod layers;
mod network;
mod params;
mod raster;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC};
pub use network::{ForwardOutput, ScorerModel, Tape};
pub use params::{BlockParams, Params};
pub use raster::{rasterize, tokenize_trajectory, tokenize_vocab, RasterScene, CHANNELS, SCENE_BEHIND, SCENE_EXTENT, TOKEN_DIM};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::reward::METRIC_COUNT;

/// Floating-point element type of the network (`f32` for training, `f64` for checks).
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff: usize,
    /// Raster cells per side.
    pub grid: usize,
    /// Patch side in cells; the scene yields `(grid / patch)^2` tokens.
    pub patch: usize,
    pub metrics: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            blocks: 2,
            ff: 256,
            grid: 64,
            patch: 16,
            metrics: METRIC_COUNT,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            blocks: 4,
            ff: 16,
            grid: 8,
            patch: 4,
            metrics: METRIC_COUNT,
        }
    }

    pub fn scene_tokens(&self) -> usize {
        (self.grid / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * CHANNELS
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if [self.d_model, self.heads, self.blocks, self.ff, self.grid, self.patch, self.metrics].contains(&0) {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.grid % self.patch != 0 {
            return bad(format!("grid {} not divisible by patch {}", self.grid, self.patch));
        }
        Ok(())
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        let (d, f, m) = (self.d_model, self.ff, self.metrics);
        let block = 6 * d + 4 * (d * d + d) + d * f + f + f * d + d;
        (self.patch_dim() + 1) * d + self.scene_tokens() * d + (TOKEN_DIM + 1) * d + self.blocks * block + 2 * d + (d + 1) + (d + 1) * m
    }
}

/// Numerically stable softmax in double precision.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `log(sum(exp(z)))` without overflow.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
