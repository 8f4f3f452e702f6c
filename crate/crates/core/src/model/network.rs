use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layers::{layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows, LnCache};
use super::{softmax, ModelConfig, Params, RasterScene, Real, CHANNELS, TOKEN_DIM};
use crate::error::ModelError;

#[derive(Debug, Clone)]
pub struct ScorerModel<R> {
    pub config: ModelConfig,
    pub params: Params<R>,
}

/// Raw head outputs for `n` trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<R> {
    pub policy_logits: Array1<R>,
    /// `(n, metrics)`.
    pub score_logits: Array2<R>,
}

impl<R: Real> ForwardOutput<R> {
    pub fn logits_f64(&self) -> Vec<f64> {
        self.policy_logits.iter().map(|v| v.as_f64()).collect()
    }

    /// Policy distribution over the `n` inputs.
    pub fn policy(&self) -> Vec<f64> {
        softmax(&self.logits_f64())
    }

    /// Sigmoid of every scoring logit, row per trajectory.
    pub fn head_scores(&self) -> Array2<f64> {
        self.score_logits.mapv(|z| super::sigmoid(z.as_f64()))
    }
}

#[derive(Debug, Clone)]
struct BlockTape<R> {
    ln_q: LnCache<R>,
    qn: Array2<R>,
    ln_kv: LnCache<R>,
    sn: Array2<R>,
    q: Array2<R>,
    k: Array2<R>,
    v: Array2<R>,
    attn: Vec<Array2<R>>,
    o: Array2<R>,
    ln_ff: LnCache<R>,
    fnorm: Array2<R>,
    h1: Array2<R>,
    relu: Array2<R>,
}

/// Intermediates retained by [`ScorerModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<R> {
    patches: Array2<R>,
    scene: Array2<R>,
    tokens: Array2<R>,
    blocks: Vec<BlockTape<R>>,
    ln_f: LnCache<R>,
    z: Array2<R>,
}

impl<R> Tape<R> {
    pub fn trajectories(&self) -> usize {
        self.tokens.nrows()
    }
}

/// Splits the raster into `(tokens, patch * patch * channels)` rows, channel-major inside a patch.
pub fn scene_patches<R: Real>(scene: &RasterScene, patch: usize) -> Array2<R> {
    let grid = scene.grid();
    let side = grid / patch;
    let mut out = Array2::zeros((side * side, patch * patch * CHANNELS));
    for pr in 0..side {
        for pc in 0..side {
            let mut row = out.row_mut(pr * side + pc);
            let mut k = 0;
            for c in 0..CHANNELS {
                for i in 0..patch {
                    for j in 0..patch {
                        row[k] = R::of(scene.data[[c, pr * patch + i, pc * patch + j]] as f64);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

fn check_finite<R: Real>(a: &Array2<R>, layer: &str) -> Result<(), ModelError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(layer.to_string()))
    }
}

impl<R: Real> ScorerModel<R> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            params: Params::init(&config, seed),
        })
    }

    pub fn with_params(config: ModelConfig, params: Params<R>) -> Result<Self, ModelError> {
        config.validate()?;
        let expect = Params::<R>::zeros(&config);
        if expect.tensors().len() != params.tensors().len() {
            return Err(ModelError::Config("tensor count differs from config".into()));
        }
        for ((_, a), (_, b)) in expect.tensors().iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(ModelError::Shape {
                    what: "parameter",
                    expected: a.shape().to_vec(),
                    got: b.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, params })
    }

    /// Scores `tokens` (one row per trajectory) against the scene.
    pub fn forward(&self, scene: &RasterScene, tokens: ArrayView2<R>) -> Result<(ForwardOutput<R>, Tape<R>), ModelError> {
        let c = &self.config;
        let p = &self.params;
        if scene.grid() != c.grid {
            return Err(ModelError::Shape {
                what: "raster grid",
                expected: vec![c.grid],
                got: vec![scene.grid()],
            });
        }
        if tokens.ncols() != TOKEN_DIM || tokens.nrows() == 0 {
            return Err(ModelError::Shape {
                what: "trajectory tokens",
                expected: vec![tokens.nrows().max(1), TOKEN_DIM],
                got: tokens.shape().to_vec(),
            });
        }
        let patches = scene_patches::<R>(scene, c.patch);
        let scene_tok = linear(patches.view(), &p.patch_w, &p.patch_b) + &p.pos;
        check_finite(&scene_tok, "patch_embed")?;
        let mut q = linear(tokens, &p.traj_w, &p.traj_b);
        check_finite(&q, "traj_embed")?;

        let dh = c.head_dim();
        let scale = R::of(1.0 / (dh as f64).sqrt());
        let mut tapes = Vec::with_capacity(c.blocks);
        for (bi, b) in p.blocks.iter().enumerate() {
            let (qn, ln_q) = layer_norm(q.view(), &b.ln_q_gain, &b.ln_q_bias);
            let (sn, ln_kv) = layer_norm(scene_tok.view(), &b.ln_kv_gain, &b.ln_kv_bias);
            let qq = linear(qn.view(), &b.wq, &b.bq);
            let kk = linear(sn.view(), &b.wk, &b.bk);
            let vv = linear(sn.view(), &b.wv, &b.bv);
            let mut o = Array2::zeros((q.nrows(), c.d_model));
            let mut attn = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut a = qq.slice(cols).dot(&kk.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                o.slice_mut(cols).assign(&a.dot(&vv.slice(cols)));
                attn.push(a);
            }
            q = q + linear(o.view(), &b.wo, &b.bo);
            check_finite(&q, &format!("blocks.{bi}.attn"))?;
            let (fnorm, ln_ff) = layer_norm(q.view(), &b.ln_ff_gain, &b.ln_ff_bias);
            let h1 = linear(fnorm.view(), &b.w1, &b.b1);
            let relu = h1.mapv(|v| if v > R::zero() { v } else { R::zero() });
            q = q + linear(relu.view(), &b.w2, &b.b2);
            check_finite(&q, &format!("blocks.{bi}.ff"))?;
            tapes.push(BlockTape {
                ln_q,
                qn,
                ln_kv,
                sn,
                q: qq,
                k: kk,
                v: vv,
                attn,
                o,
                ln_ff,
                fnorm,
                h1,
                relu,
            });
        }
        let (z, ln_f) = layer_norm(q.view(), &p.ln_f_gain, &p.ln_f_bias);
        let policy_logits = linear(z.view(), &p.policy_w, &p.policy_b).column(0).to_owned();
        let score_logits = linear(z.view(), &p.score_w, &p.score_b);
        check_finite(&score_logits, "heads")?;
        if !policy_logits.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("policy_head".into()));
        }
        Ok((
            ForwardOutput {
                policy_logits,
                score_logits,
            },
            Tape {
                patches,
                scene: scene_tok,
                tokens: tokens.to_owned(),
                blocks: tapes,
                ln_f,
                z,
            },
        ))
    }

    /// Adds the parameter gradients for output seeds `d_policy` (n) and
    /// `d_scores` (n x metrics) into `grads`.
    pub fn backward(
        &self,
        tape: &Tape<R>,
        d_policy: ArrayView1<R>,
        d_scores: ArrayView2<R>,
        grads: &mut Params<R>,
    ) -> Result<(), ModelError> {
        let c = &self.config;
        let p = &self.params;
        let n = tape.trajectories();
        if d_policy.len() != n {
            return Err(ModelError::Shape {
                what: "policy seed",
                expected: vec![n],
                got: vec![d_policy.len()],
            });
        }
        if d_scores.dim() != (n, c.metrics) {
            return Err(ModelError::Shape {
                what: "score seed",
                expected: vec![n, c.metrics],
                got: d_scores.shape().to_vec(),
            });
        }
        let dpol = d_policy.insert_axis(Axis(1));
        let mut dz = linear_backward(tape.z.view(), dpol, &p.policy_w, &mut grads.policy_w, &mut grads.policy_b);
        dz += &linear_backward(tape.z.view(), d_scores, &p.score_w, &mut grads.score_w, &mut grads.score_b);
        let mut dq = layer_norm_backward(dz.view(), &tape.ln_f, &p.ln_f_gain, &mut grads.ln_f_gain, &mut grads.ln_f_bias);
        let mut dscene = Array2::<R>::zeros(tape.scene.raw_dim());

        let dh = c.head_dim();
        let scale = R::of(1.0 / (dh as f64).sqrt());
        for (bi, t) in tape.blocks.iter().enumerate().rev() {
            let b = &p.blocks[bi];
            let g = &mut grads.blocks[bi];

            let drelu = linear_backward(t.relu.view(), dq.view(), &b.w2, &mut g.w2, &mut g.b2);
            let mut dh1 = drelu;
            ndarray::Zip::from(&mut dh1).and(&t.h1).for_each(|d, h| {
                if *h <= R::zero() {
                    *d = R::zero();
                }
            });
            let dfn = linear_backward(t.fnorm.view(), dh1.view(), &b.w1, &mut g.w1, &mut g.b1);
            dq += &layer_norm_backward(dfn.view(), &t.ln_ff, &b.ln_ff_gain, &mut g.ln_ff_gain, &mut g.ln_ff_bias);

            let d_o = linear_backward(t.o.view(), dq.view(), &b.wo, &mut g.wo, &mut g.bo);
            let mut dqq = Array2::zeros(t.q.raw_dim());
            let mut dkk = Array2::zeros(t.k.raw_dim());
            let mut dvv = Array2::zeros(t.v.raw_dim());
            for h in 0..c.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let a = &t.attn[h];
                let doh = d_o.slice(cols);
                let da = doh.dot(&t.v.slice(cols).t());
                dvv.slice_mut(cols).assign(&a.t().dot(&doh));
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (a * &(&da - &row_dot)) * scale;
                dqq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
                dkk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
            }
            let dqn = linear_backward(t.qn.view(), dqq.view(), &b.wq, &mut g.wq, &mut g.bq);
            let mut dsn = linear_backward(t.sn.view(), dkk.view(), &b.wk, &mut g.wk, &mut g.bk);
            dsn += &linear_backward(t.sn.view(), dvv.view(), &b.wv, &mut g.wv, &mut g.bv);
            dq += &layer_norm_backward(dqn.view(), &t.ln_q, &b.ln_q_gain, &mut g.ln_q_gain, &mut g.ln_q_bias);
            dscene += &layer_norm_backward(dsn.view(), &t.ln_kv, &b.ln_kv_gain, &mut g.ln_kv_gain, &mut g.ln_kv_bias);
        }
        linear_backward(tape.tokens.view(), dq.view(), &p.traj_w, &mut grads.traj_w, &mut grads.traj_b);
        grads.pos += &dscene;
        linear_backward(tape.patches.view(), dscene.view(), &p.patch_w, &mut grads.patch_w, &mut grads.patch_b);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(grid: usize, seed: u64) -> RasterScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterScene {
            data: Array3::from_shape_fn((CHANNELS, grid, grid), |_| rng.random_range(0.0..1.0f32)),
        }
    }

    fn random_tokens(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, TOKEN_DIM), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_shapes_and_duplicate_rows() {
        let c = ModelConfig::tiny();
        let m = ScorerModel::<f64>::new(c, 1).unwrap();
        let mut tok = random_tokens(5, 2);
        let row = tok.row(1).to_owned();
        tok.row_mut(3).assign(&row);
        let (out, _) = m.forward(&random_scene(c.grid, 3), tok.view()).unwrap();
        assert_eq!(out.policy_logits.len(), 5);
        assert_eq!(out.score_logits.dim(), (5, 9));
        assert_eq!(out.policy_logits[1], out.policy_logits[3]);
        assert_eq!(out.score_logits.row(1), out.score_logits.row(3));
    }

    #[test]
    fn permuting_queries_permutes_outputs_exactly() {
        let c = ModelConfig::default();
        let m = ScorerModel::<f32>::new(c, 4).unwrap();
        let scene = random_scene(c.grid, 5);
        let tok = random_tokens(37, 6).mapv(|v| v as f32);
        let perm: Vec<usize> = (0..37).map(|i| (i * 11 + 5) % 37).collect();
        let shuffled = tok.select(Axis(0), &perm);
        let (a, _) = m.forward(&scene, tok.view()).unwrap();
        let (b, _) = m.forward(&scene, shuffled.view()).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(b.policy_logits[i].to_bits(), a.policy_logits[j].to_bits());
            assert_eq!(b.score_logits.row(i), a.score_logits.row(j));
        }
    }

    #[test]
    fn zero_parameters_give_uniform_outputs() {
        let c = ModelConfig::tiny();
        let m = ScorerModel::with_params(c, Params::<f64>::zeros(&c)).unwrap();
        let (out, _) = m.forward(&random_scene(c.grid, 1), random_tokens(4, 1).view()).unwrap();
        assert!(out.policy().iter().all(|p| *p == 0.25));
        assert!(out.head_scores().iter().all(|s| *s == 0.5));
    }

    #[test]
    fn zero_seeds_give_zero_gradients_and_frozen_heads_stay_zero() {
        let c = ModelConfig::tiny();
        let m = ScorerModel::<f64>::new(c, 2).unwrap();
        let (_, tape) = m.forward(&random_scene(c.grid, 2), random_tokens(5, 2).view()).unwrap();
        let mut g = Params::zeros(&c);
        m.backward(&tape, Array1::zeros(5).view(), Array2::zeros((5, 9)).view(), &mut g).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
        let seed = Array1::from_vec(vec![0.3, -0.2, 0.1, 0.5, -0.7]);
        m.backward(&tape, seed.view(), Array2::zeros((5, 9)).view(), &mut g).unwrap();
        assert!(g.score_w.iter().chain(g.score_b.iter()).all(|v| *v == 0.0));
        assert!(g.policy_w.iter().any(|v| *v != 0.0));
        let bad = m.backward(&tape, Array1::zeros(4).view(), Array2::zeros((5, 9)).view(), &mut g);
        assert!(matches!(bad, Err(ModelError::Shape { .. })));
    }

    #[test]
    fn non_finite_parameters_name_the_layer() {
        let c = ModelConfig::tiny();
        let mut m = ScorerModel::<f64>::new(c, 2).unwrap();
        m.params.blocks[1].w2[[0, 0]] = f64::NAN;
        // the NaN only reaches the output if the ReLU unit is active for some row
        m.params.blocks[1].b1.fill(1.0);
        let err = m.forward(&random_scene(c.grid, 2), random_tokens(3, 2).view()).unwrap_err();
        assert_eq!(err.to_string(), ModelError::NonFinite("blocks.1.ff".into()).to_string());
    }
}
