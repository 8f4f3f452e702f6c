use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::TrainError;
use crate::evalrun::argmax;
use crate::model::{log_sum_exp, sigmoid, softmax, RasterScene, Params, Real, ScorerModel};
use crate::reward::EcIndicator;

/// `λ` when switching from the previous frame's choice to `cur` breaks plan
/// consistency, 0 otherwise or without a previous frame.
pub fn correction_term(prev_frame_argmax: Option<usize>, cur_action: usize, ec: &EcIndicator, lambda: f64) -> f64 {
    match prev_frame_argmax {
        Some(prev) if lambda != 0.0 && ec.violated(prev, cur_action) => lambda,
        _ => 0.0,
    }
}

/// `(x - mean) / max(std, 1e-8)` with the population standard deviation.
pub fn normalize_advantage(raw: &[f64]) -> Vec<f64> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    raw.iter().map(|x| (x - mean) / std).collect()
}

/// Reward row, correction and normalized advantage of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub raw: Vec<f64>,
    pub correction: Vec<f64>,
    pub psi: Vec<f64>,
}

impl AdvantageBatch {
    pub fn new(e_row: &[f64], prev_frame_argmax: Option<usize>, ec: &EcIndicator, lambda: f64) -> Result<Self, TrainError> {
        let correction: Vec<f64> = (0..e_row.len())
            .map(|a| correction_term(prev_frame_argmax, a, ec, lambda))
            .collect();
        let shifted: Vec<f64> = e_row.iter().zip(&correction).map(|(e, b)| e - b).collect();
        let psi = normalize_advantage(&shifted);
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteAdvantage);
        }
        Ok(Self {
            raw: e_row.to_vec(),
            correction,
            psi,
        })
    }
}

fn check_finite(psi: &[f64]) -> Result<(), TrainError> {
    if psi.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::NonFiniteAdvantage)
    }
}

/// Surrogate `-Σ Ψ_a π_a` and its gradient with respect to the policy logits.
pub fn epo_logit_loss(logits: &[f64], psi: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
    check_finite(psi)?;
    let pi = softmax(logits);
    let expected: f64 = pi.iter().zip(psi).map(|(p, s)| p * s).sum();
    let grad = pi.iter().zip(psi).map(|(p, s)| -p * (s - expected)).collect();
    Ok((-expected, grad))
}

/// Inverse-CDF draw from `probs` with a uniform `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `-Ψ_a log π_a` for a given sampled action.
pub fn reinforce_logit_loss(logits: &[f64], psi: &[f64], action: usize) -> Result<(f64, Vec<f64>), TrainError> {
    check_finite(psi)?;
    let pi = softmax(logits);
    let log_pi = logits[action] - log_sum_exp(logits);
    let grad = pi
        .iter()
        .enumerate()
        .map(|(i, p)| -psi[action] * (if i == action { 1.0 } else { 0.0 } - p))
        .collect();
    Ok((-psi[action] * log_pi, grad))
}

/// Cross-entropy against the first maximum of `e_row`.
pub fn imitation_logit_loss(logits: &[f64], e_row: &[f64]) -> (f64, Vec<f64>) {
    let target = argmax(e_row);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (log_sum_exp(logits) - logits[target], grad)
}

/// `α` times the mean binary cross-entropy of `sigmoid(z)` against `targets`.
pub fn scoring_logit_loss(
    score_logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    alpha: f64,
) -> Result<(f64, Array2<f64>), TrainError> {
    if let Some(bad) = targets.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(TrainError::TargetRange { value: *bad });
    }
    let scale = alpha / score_logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(score_logits.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(&score_logits)
        .and(&targets)
        .for_each(|g, z, y| {
            // softplus(z) - y z, written to stay finite for large |z|
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            *g = scale * (sigmoid(*z) - y);
        });
    Ok((scale * loss, grad))
}

fn backprop<R: Real>(
    model: &ScorerModel<R>,
    scene: &RasterScene,
    tokens: ArrayView2<R>,
    seeds: impl FnOnce(&[f64], ArrayView2<f64>) -> Result<(f64, Vec<f64>, Array2<f64>), TrainError>,
) -> Result<(f64, Params<R>), TrainError> {
    let (out, tape) = model.forward(scene, tokens)?;
    let logits = out.logits_f64();
    let scores = out.score_logits.mapv(|v| v.as_f64());
    let (loss, d_policy, d_scores) = seeds(&logits, scores.view())?;
    let mut grads = Params::zeros(&model.config);
    let d_policy: Array1<R> = d_policy.into_iter().map(R::of).collect();
    model.backward(&tape, d_policy.view(), d_scores.mapv(R::of).view(), &mut grads)?;
    Ok((loss, grads))
}

fn policy_only(n: usize, m: usize, (loss, g): (f64, Vec<f64>)) -> (f64, Vec<f64>, Array2<f64>) {
    (loss, g, Array2::zeros((n, m)))
}

/// Exhaustive policy-gradient surrogate through the full model.
pub fn epo_loss_and_grads<R: Real>(
    model: &ScorerModel<R>,
    scene: &RasterScene,
    tokens: ArrayView2<R>,
    psi: &[f64],
) -> Result<(f64, Params<R>), TrainError> {
    let m = model.config.metrics;
    backprop(model, scene, tokens, |logits, _| {
        Ok(policy_only(logits.len(), m, epo_logit_loss(logits, psi)?))
    })
}

/// Single-sample log-likelihood surrogate; returns the sampled action too.
pub fn reinforce_loss_and_grads<R: Real>(
    model: &ScorerModel<R>,
    scene: &RasterScene,
    tokens: ArrayView2<R>,
    psi: &[f64],
    rng: &mut impl Rng,
) -> Result<(f64, Params<R>, usize), TrainError> {
    let m = model.config.metrics;
    let u: f64 = rng.random();
    let mut action = 0;
    let (loss, grads) = backprop(model, scene, tokens, |logits, _| {
        action = sample_index(&softmax(logits), u);
        Ok(policy_only(logits.len(), m, reinforce_logit_loss(logits, psi, action)?))
    })?;
    Ok((loss, grads, action))
}

pub fn imitation_loss_and_grads<R: Real>(
    model: &ScorerModel<R>,
    scene: &RasterScene,
    tokens: ArrayView2<R>,
    e_row: &[f64],
) -> Result<(f64, Params<R>), TrainError> {
    let m = model.config.metrics;
    backprop(model, scene, tokens, |logits, _| {
        Ok(policy_only(logits.len(), m, imitation_logit_loss(logits, e_row)))
    })
}

pub fn scoring_loss_and_grads<R: Real>(
    model: &ScorerModel<R>,
    scene: &RasterScene,
    tokens: ArrayView2<R>,
    targets: ArrayView2<f64>,
    alpha: f64,
) -> Result<(f64, Params<R>), TrainError> {
    backprop(model, scene, tokens, |logits, scores| {
        let (loss, g) = scoring_logit_loss(scores, targets, alpha)?;
        Ok((loss, vec![0.0; logits.len()], g))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::EcThresholds;
    use crate::vocab::{rollout_controls, ControlSegment};
    use crate::world::EgoParams;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_advantage(&[0.3, 0.3, 0.3]), vec![0.0; 3]);
        assert_eq!(normalize_advantage(&[0.0, 1.0]), vec![-1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn normalized_vectors_are_standard(raw in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let z = normalize_advantage(&raw);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = raw.iter().cloned().fold(f64::MIN, f64::max) - raw.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                let std = (z.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
        }
    }

    fn pair_indicator() -> EcIndicator {
        let p = EgoParams::default();
        let roll = |a: f64| rollout_controls(10.0, &[ControlSegment { accel: a, steer: 0.0 }], &p);
        EcIndicator::new(&[roll(0.0), roll(-4.0), roll(0.0)], EcThresholds::default())
    }

    #[test]
    fn correction_examples() {
        let ec = pair_indicator();
        assert_eq!(correction_term(Some(0), 2, &ec, 0.2), 0.0);
        assert_eq!(correction_term(Some(0), 1, &ec, 0.2), 0.2);
        assert_eq!(correction_term(Some(0), 1, &ec, 0.0), 0.0);
        assert_eq!(correction_term(None, 1, &ec, 0.2), 0.0);
    }

    #[test]
    fn epo_two_action_example() {
        let (_, g) = epo_logit_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
        let (_, zero) = epo_logit_loss(&[0.3, -1.0, 2.0], &[0.0; 3]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(epo_logit_loss(&[0.0, 0.0], &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn reinforce_zero_advantage_gives_zero_gradient() {
        let (loss, g) = reinforce_logit_loss(&[0.1, 0.2, 0.3], &[0.0, 1.0, -1.0], 0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn imitation_examples() {
        let n = 7;
        let (loss, _) = imitation_logit_loss(&vec![0.0; n], &[0.1, 0.9, 0.2, 0.9, 0.0, 0.0, 0.0]);
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
        let (_, g) = imitation_logit_loss(&[0.0, 0.0, 0.0], &[0.5, 0.9, 0.9]);
        assert!(g[1] < 0.0 && g[2] > 0.0);
        let (peaked, _) = imitation_logit_loss(&[30.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!(peaked < 1e-10);
    }

    #[test]
    fn scoring_examples() {
        let z = Array2::zeros((2, 3));
        let y = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let (loss, _) = scoring_logit_loss(z.view(), y.view(), 1.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let perfect = y.mapv(|v| if v > 0.5 { 40.0 } else { -40.0 });
        assert!(scoring_logit_loss(perfect.view(), y.view(), 1.0).unwrap().0 < 1e-15);
        let bad = array![[1.5, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(
            scoring_logit_loss(z.view(), bad.view(), 1.0),
            Err(TrainError::TargetRange { value }) if value == 1.5
        ));
    }

    #[test]
    fn sampling_follows_cumulative_mass() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(sample_index(&p, 0.0), 0);
        assert_eq!(sample_index(&p, 0.19), 0);
        assert_eq!(sample_index(&p, 0.2), 1);
        assert_eq!(sample_index(&p, 0.99), 2);
    }
}
