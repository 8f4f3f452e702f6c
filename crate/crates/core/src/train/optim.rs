use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::model::{OptimizerState, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One bias-corrected adaptive-moment step.
pub fn adam_step(params: &mut Params<f32>, grads: &Params<f32>, state: &mut OptimizerState, c: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in tensors {
        Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, g, m, v| {
            let g = *g as f64;
            let mn = c.beta1 * *m as f64 + (1.0 - c.beta1) * g;
            let vn = c.beta2 * *v as f64 + (1.0 - c.beta2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let update = (mn / bc1) / ((vn / bc2).sqrt() + c.eps) + c.weight_decay * *p as f64;
            *p = (*p as f64 - c.lr * update) as f32;
        });
    }
}
