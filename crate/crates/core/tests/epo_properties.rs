mod common;

use common::grad::{instance, model};
use proptest::prelude::*;
use trajscore::model::ScorerModel;
use trajscore::train::{epo_logit_loss, epo_loss_and_grads, normalize_advantage};

fn mass(m: &ScorerModel<f64>, inst: &common::grad::Instance, set: &[bool]) -> f64 {
    let (out, _) = m.forward(&inst.scene, inst.tokens.view()).unwrap();
    out.policy().iter().zip(set).filter(|(_, &s)| s).map(|(p, _)| p).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // With a binary reward the surrogate is affine in the mass of the rewarded
    // set, so a small descent step on it must move mass into that set.
    #[test]
    fn small_step_moves_mass_to_positive_actions(seed in 0u64..10_000, bits in 1u32..31) {
        let inst = instance(seed);
        let reward: Vec<f64> = (0..common::grad::N).map(|i| ((bits >> i) & 1) as f64).collect();
        let psi = normalize_advantage(&reward);
        let positive: Vec<bool> = psi.iter().map(|&v| v > 0.0).collect();
        let m = model(&inst, inst.params.clone());
        let (_, g) = epo_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &psi).unwrap();
        let mut stepped = inst.params.clone();
        stepped.add_scaled(&g, -1e-5);
        let after = model(&inst, stepped);
        prop_assert!(mass(&after, &inst, &positive) > mass(&m, &inst, &positive));
    }

    #[test]
    fn zero_advantage_gives_zero_gradient(seed in 0u64..10_000) {
        let inst = instance(seed);
        let m = model(&inst, inst.params.clone());
        let zeros = vec![0.0; common::grad::N];
        let (loss, g) = epo_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &zeros).unwrap();
        prop_assert_eq!(loss, 0.0);
        for (_, t) in g.tensors() {
            prop_assert!(t.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn two_action_hand_case() {
    let (_, g) = epo_logit_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
    assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
}
