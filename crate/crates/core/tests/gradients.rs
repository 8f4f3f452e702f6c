//! Analytic parameter gradients against central finite differences.

mod common;

use common::grad::{check_all, instance, model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajscore::train::reinforce_loss_and_grads;

#[test]
fn all_losses_match_finite_differences() {
    for seed in 100..105 {
        check_all(seed);
    }
}

#[test]
fn reinforce_sampling_is_seeded() {
    let inst = instance(3);
    let m = model(&inst, inst.params.clone());
    let draw = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        (0..20)
            .map(|_| reinforce_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &inst.psi, &mut rng).unwrap().2)
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
}
