use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real, TOKEN_DIM};

/// One decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<R> {
    pub ln_q_gain: Array1<R>,
    pub ln_q_bias: Array1<R>,
    pub ln_kv_gain: Array1<R>,
    pub ln_kv_bias: Array1<R>,
    pub wq: Array2<R>,
    pub bq: Array1<R>,
    pub wk: Array2<R>,
    pub bk: Array1<R>,
    pub wv: Array2<R>,
    pub bv: Array1<R>,
    pub wo: Array2<R>,
    pub bo: Array1<R>,
    pub ln_ff_gain: Array1<R>,
    pub ln_ff_bias: Array1<R>,
    pub w1: Array2<R>,
    pub b1: Array1<R>,
    pub w2: Array2<R>,
    pub b2: Array1<R>,
}

/// All trainable tensors. Linear maps are stored `(in, out)` and applied as `x W + b`.
/// The same layout holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<R> {
    pub patch_w: Array2<R>,
    pub patch_b: Array1<R>,
    pub pos: Array2<R>,
    pub traj_w: Array2<R>,
    pub traj_b: Array1<R>,
    pub blocks: Vec<BlockParams<R>>,
    pub ln_f_gain: Array1<R>,
    pub ln_f_bias: Array1<R>,
    pub policy_w: Array2<R>,
    pub policy_b: Array1<R>,
    pub score_w: Array2<R>,
    pub score_b: Array1<R>,
}

macro_rules! tensor_list {
    ($s:expr, $iter:ident, $view:ident) => {{
        let s = $s;
        let mut out = vec![
            ("patch_embed.weight".to_string(), s.patch_w.$view().into_dyn()),
            ("patch_embed.bias".to_string(), s.patch_b.$view().into_dyn()),
            ("pos_embed".to_string(), s.pos.$view().into_dyn()),
            ("traj_embed.weight".to_string(), s.traj_w.$view().into_dyn()),
            ("traj_embed.bias".to_string(), s.traj_b.$view().into_dyn()),
        ];
        for (i, b) in s.blocks.$iter().enumerate() {
            let name = |n: &str| format!("blocks.{i}.{n}");
            out.push((name("ln_q.gain"), b.ln_q_gain.$view().into_dyn()));
            out.push((name("ln_q.bias"), b.ln_q_bias.$view().into_dyn()));
            out.push((name("ln_kv.gain"), b.ln_kv_gain.$view().into_dyn()));
            out.push((name("ln_kv.bias"), b.ln_kv_bias.$view().into_dyn()));
            out.push((name("attn.q.weight"), b.wq.$view().into_dyn()));
            out.push((name("attn.q.bias"), b.bq.$view().into_dyn()));
            out.push((name("attn.k.weight"), b.wk.$view().into_dyn()));
            out.push((name("attn.k.bias"), b.bk.$view().into_dyn()));
            out.push((name("attn.v.weight"), b.wv.$view().into_dyn()));
            out.push((name("attn.v.bias"), b.bv.$view().into_dyn()));
            out.push((name("attn.out.weight"), b.wo.$view().into_dyn()));
            out.push((name("attn.out.bias"), b.bo.$view().into_dyn()));
            out.push((name("ln_ff.gain"), b.ln_ff_gain.$view().into_dyn()));
            out.push((name("ln_ff.bias"), b.ln_ff_bias.$view().into_dyn()));
            out.push((name("ff.in.weight"), b.w1.$view().into_dyn()));
            out.push((name("ff.in.bias"), b.b1.$view().into_dyn()));
            out.push((name("ff.out.weight"), b.w2.$view().into_dyn()));
            out.push((name("ff.out.bias"), b.b2.$view().into_dyn()));
        }
        out.push(("ln_f.gain".to_string(), s.ln_f_gain.$view().into_dyn()));
        out.push(("ln_f.bias".to_string(), s.ln_f_bias.$view().into_dyn()));
        out.push(("policy_head.weight".to_string(), s.policy_w.$view().into_dyn()));
        out.push(("policy_head.bias".to_string(), s.policy_b.$view().into_dyn()));
        out.push(("score_heads.weight".to_string(), s.score_w.$view().into_dyn()));
        out.push(("score_heads.bias".to_string(), s.score_b.$view().into_dyn()));
        out
    }};
}

impl<R: Real> Params<R> {
    /// Every tensor set to `fill`, including normalization gains.
    pub fn filled(c: &ModelConfig, fill: R) -> Self {
        let (d, f, m) = (c.d_model, c.ff, c.metrics);
        let v = |n: usize| Array1::from_elem(n, fill);
        let mat = |a: usize, b: usize| Array2::from_elem((a, b), fill);
        let block = || BlockParams {
            ln_q_gain: v(d),
            ln_q_bias: v(d),
            ln_kv_gain: v(d),
            ln_kv_bias: v(d),
            wq: mat(d, d),
            bq: v(d),
            wk: mat(d, d),
            bk: v(d),
            wv: mat(d, d),
            bv: v(d),
            wo: mat(d, d),
            bo: v(d),
            ln_ff_gain: v(d),
            ln_ff_bias: v(d),
            w1: mat(d, f),
            b1: v(f),
            w2: mat(f, d),
            b2: v(d),
        };
        Self {
            patch_w: mat(c.patch_dim(), d),
            patch_b: v(d),
            pos: mat(c.scene_tokens(), d),
            traj_w: mat(TOKEN_DIM, d),
            traj_b: v(d),
            blocks: (0..c.blocks).map(|_| block()).collect(),
            ln_f_gain: v(d),
            ln_f_bias: v(d),
            policy_w: mat(d, 1),
            policy_b: v(1),
            score_w: mat(d, m),
            score_b: v(m),
        }
    }

    pub fn zeros(c: &ModelConfig) -> Self {
        Self::filled(c, R::zero())
    }

    /// Seeded initialization: Glorot-uniform weights, zero biases, unit
    /// normalization gains, positional vectors from `N(0, 0.02)`.
    pub fn init(c: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for (name, mut t) in p.tensors_mut() {
            if name.ends_with(".gain") {
                t.fill(R::one());
            } else if name == "pos_embed" {
                t.iter_mut().for_each(|v| *v = R::of(normal.sample(&mut rng)));
            } else if t.ndim() == 2 {
                let limit = (6.0 / (t.shape()[0] + t.shape()[1]) as f64).sqrt();
                t.iter_mut().for_each(|v| *v = R::of(rng.random_range(-limit..limit)));
            }
        }
        p
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, R>)> {
        tensor_list!(self, iter, view)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, R>)> {
        tensor_list!(self, iter_mut, view_mut)
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> Params<S> {
        let v = |a: &Array1<R>| a.mapv(|x| S::of(x.as_f64()));
        let m = |a: &Array2<R>| a.mapv(|x| S::of(x.as_f64()));
        Params {
            patch_w: m(&self.patch_w),
            patch_b: v(&self.patch_b),
            pos: m(&self.pos),
            traj_w: m(&self.traj_w),
            traj_b: v(&self.traj_b),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln_q_gain: v(&b.ln_q_gain),
                    ln_q_bias: v(&b.ln_q_bias),
                    ln_kv_gain: v(&b.ln_kv_gain),
                    ln_kv_bias: v(&b.ln_kv_bias),
                    wq: m(&b.wq),
                    bq: v(&b.bq),
                    wk: m(&b.wk),
                    bk: v(&b.bk),
                    wv: m(&b.wv),
                    bv: v(&b.bv),
                    wo: m(&b.wo),
                    bo: v(&b.bo),
                    ln_ff_gain: v(&b.ln_ff_gain),
                    ln_ff_bias: v(&b.ln_ff_bias),
                    w1: m(&b.w1),
                    b1: v(&b.b1),
                    w2: m(&b.w2),
                    b2: v(&b.b2),
                })
                .collect(),
            ln_f_gain: v(&self.ln_f_gain),
            ln_f_bias: v(&self.ln_f_bias),
            policy_w: m(&self.policy_w),
            policy_b: v(&self.policy_b),
            score_w: m(&self.score_w),
            score_b: v(&self.score_b),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params<R>, scale: R) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            Zip::from(&mut a).and(&b).for_each(|x, y| *x += scale * *y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
