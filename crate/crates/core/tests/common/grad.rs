//! Central-difference checks of the analytic parameter gradients.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajscore::model::{ModelConfig, Params, RasterScene, ScorerModel, CHANNELS, TOKEN_DIM};
use trajscore::train::{
    epo_logit_loss, epo_loss_and_grads, imitation_logit_loss, imitation_loss_and_grads, reinforce_logit_loss,
    reinforce_loss_and_grads, scoring_logit_loss, scoring_loss_and_grads,
};

pub const N: usize = 5;
pub const TOL: f64 = 1e-4;

pub struct Instance {
    pub config: ModelConfig,
    pub params: Params<f64>,
    pub scene: RasterScene,
    pub tokens: Array2<f64>,
    pub psi: Vec<f64>,
    pub e_row: Vec<f64>,
    pub targets: Array2<f64>,
}

pub fn instance(seed: u64) -> Instance {
    let config = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::<f64>::init(&config, seed);
    // move gains and biases off their trivial initial values
    for (_, mut t) in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let g = config.grid;
    let scene = RasterScene {
        data: Array3::from_shape_fn((CHANNELS, g, g), |_| rng.random::<f32>()),
    };
    let tokens = Array2::from_shape_fn((N, TOKEN_DIM), |_| rng.random_range(-1.0..1.0));
    let psi = (0..N).map(|_| rng.random_range(-1.5..1.5)).collect();
    let e_row = (0..N).map(|_| rng.random::<f64>()).collect();
    let targets = Array2::from_shape_fn((N, config.metrics), |(i, j)| {
        if (i + j) % 3 == 0 {
            rng.random::<f64>()
        } else if rng.random_bool(0.5) {
            1.0
        } else {
            0.0
        }
    });
    Instance {
        config,
        params,
        scene,
        tokens,
        psi,
        e_row,
        targets,
    }
}

pub fn model(inst: &Instance, params: Params<f64>) -> ScorerModel<f64> {
    ScorerModel::with_params(inst.config, params).unwrap()
}

/// Compares every analytic gradient entry with a central difference of `loss`,
/// halving the step when the difference straddles a rectifier kink.
pub fn check(name: &str, inst: &Instance, analytic: &Params<f64>, loss: &dyn Fn(&ScorerModel<f64>) -> f64) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = model(inst, inst.params.clone());
    for (ti, (tname, g)) in analytic.tensors().iter().enumerate() {
        for (ei, a) in g.iter().enumerate() {
            let theta = inst.params.tensors()[ti].1.as_slice_memory_order().unwrap()[ei];
            let mut h = 1e-4 * theta.abs().max(1.0);
            let mut err = f64::INFINITY;
            for _ in 0..4 {
                let mut eval = |v: f64| {
                    probe.params.tensors_mut()[ti].1.as_slice_memory_order_mut().unwrap()[ei] = v;
                    loss(&probe)
                };
                let fd = (eval(theta + h) - eval(theta - h)) / (2.0 * h);
                eval(theta);
                err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                if err <= TOL {
                    break;
                }
                h *= 0.5;
            }
            assert!(err <= TOL, "{name}: {tname}[{ei}] analytic {a} rel err {err}");
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert_eq!(checked, inst.config.parameter_count());
    assert!(worst <= TOL, "{name}: worst {worst}");
}

pub fn logits(m: &ScorerModel<f64>, inst: &Instance) -> (Vec<f64>, Array2<f64>) {
    let (out, _) = m.forward(&inst.scene, inst.tokens.view()).unwrap();
    (out.logits_f64(), out.score_logits)
}

/// Runs all four loss checks on one seeded instance.
pub fn check_all(seed: u64) {
    let inst = instance(seed);
    let m = model(&inst, inst.params.clone());
    let (_, g) = epo_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &inst.psi).unwrap();
    check("epo", &inst, &g, &|m| epo_logit_loss(&logits(m, &inst).0, &inst.psi).unwrap().0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let (_, g, action) = reinforce_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &inst.psi, &mut rng).unwrap();
    check("reinforce", &inst, &g, &|m| {
        reinforce_logit_loss(&logits(m, &inst).0, &inst.psi, action).unwrap().0
    });

    let (_, g) = imitation_loss_and_grads(&m, &inst.scene, inst.tokens.view(), &inst.e_row).unwrap();
    check("imitation", &inst, &g, &|m| imitation_logit_loss(&logits(m, &inst).0, &inst.e_row).0);

    let (_, g) = scoring_loss_and_grads(&m, &inst.scene, inst.tokens.view(), inst.targets.view(), 0.7).unwrap();
    check("scoring", &inst, &g, &|m| {
        scoring_logit_loss(logits(m, &inst).1.view(), inst.targets.view(), 0.7).unwrap().0
    });
}
