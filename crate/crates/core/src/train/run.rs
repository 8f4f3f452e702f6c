use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::loss::{
    epo_logit_loss, imitation_logit_loss, reinforce_logit_loss, sample_index, scoring_logit_loss, AdvantageBatch,
};
use super::optim::{adam_step, AdamConfig};
use super::{Paradigm, TrainConfig};
use crate::error::TrainError;
use crate::evalrun::{argmax, evaluate_open_loop, Selector};
use crate::model::{rasterize, tokenize_vocab, Checkpoint, OptimizerState, Params, RasterScene, ScorerModel};
use crate::reward::{EcIndicator, RewardTable, METRIC_COUNT};
use crate::vocab::Vocabulary;
use crate::world::{Dataset, FrameRef};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: &'static str,
    pub mean_epdms: f64,
    pub mean_ec: f64,
    pub loss: f64,
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,split,mean_epdms,mean_ec,loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.split, r.mean_epdms, r.mean_ec, r.loss);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRow>,
}

/// Read-only state shared by every step.
struct Context<'a> {
    dataset: &'a Dataset,
    table: &'a RewardTable,
    config: &'a TrainConfig,
    prefix: usize,
    tokens: Array2<f32>,
    ec: EcIndicator,
    lambda: f64,
    scenes: Vec<Option<RasterScene>>,
}

/// Sums of one pass over a group of whole clips.
struct PassResult {
    loss: f64,
    frames: usize,
    epdms: f64,
    ec: f64,
    grads: Option<Params<f32>>,
}

impl Context<'_> {
    fn scene(&self, f: &FrameRef) -> RasterScene {
        match &self.scenes[f.global] {
            Some(s) => s.clone(),
            None => rasterize(&self.dataset.clips[f.clip].context(f.frame), self.config.model.grid),
        }
    }

    fn e_row(&self, global: usize) -> Vec<f64> {
        self.table.epdms_row(global, self.prefix, &self.config.reward.weights)
    }

    fn score_targets(&self, global: usize) -> Array2<f64> {
        let rows = &self.table.frame_rows(global)[..self.prefix];
        Array2::from_shape_fn((self.prefix, METRIC_COUNT), |(a, m)| rows[a][m] as f64)
    }

    /// Forward over `frames` (whole clips, in order), loss seeds per frame with
    /// `a_{t-1}` from the same weights, and optionally the averaged gradient.
    fn pass(
        &self,
        model: &ScorerModel<f32>,
        frames: &[FrameRef],
        uniforms: &[f64],
        with_grads: bool,
    ) -> Result<PassResult, TrainError> {
        let forwards = frames
            .par_iter()
            .map(|f| model.forward(&self.scene(f), self.tokens.view()))
            .collect::<Result<Vec<_>, _>>()?;
        let policies: Vec<Vec<f64>> = forwards.iter().map(|(o, _)| o.policy()).collect();
        let choices: Vec<usize> = policies.iter().map(|p| argmax(p)).collect();

        let scale = 1.0 / frames.len() as f64;
        let mut loss = 0.0;
        let mut epdms = 0.0;
        let mut ec_sum = 0.0;
        let mut seeds = Vec::with_capacity(frames.len());
        for (i, f) in frames.iter().enumerate() {
            let prev = (f.frame > 0 && i > 0 && frames[i - 1].clip == f.clip).then(|| choices[i - 1]);
            let e_row = self.e_row(f.global);
            let logits = forwards[i].0.logits_f64();
            let (policy_loss, d_policy) = match self.config.paradigm {
                Paradigm::EpoLikelihoodEb | Paradigm::EpoLikelihoodE => {
                    let adv = AdvantageBatch::new(&e_row, prev, &self.ec, self.lambda)?;
                    epo_logit_loss(&logits, &adv.psi)?
                }
                Paradigm::ReinforceLogLikelihood => {
                    let adv = AdvantageBatch::new(&e_row, prev, &self.ec, self.lambda)?;
                    let action = sample_index(&policies[i], uniforms[i]);
                    reinforce_logit_loss(&logits, &adv.psi, action)?
                }
                Paradigm::ArgmaxImitation => imitation_logit_loss(&logits, &e_row),
            };
            let scores = forwards[i].0.score_logits.mapv(|v| v as f64);
            let (score_loss, d_scores) = scoring_logit_loss(scores.view(), self.score_targets(f.global).view(), self.config.alpha)?;
            loss += policy_loss + score_loss;
            epdms += e_row[choices[i]];
            ec_sum += match prev {
                Some(p) if self.ec.violated(p, choices[i]) => 0.0,
                _ => 1.0,
            };
            if with_grads {
                let dp: Array1<f32> = d_policy.iter().map(|g| (g * scale) as f32).collect();
                let ds = d_scores.mapv(|g| (g * scale) as f32);
                seeds.push((dp, ds));
            }
        }

        let grads = if with_grads {
            let parts = forwards
                .par_iter()
                .zip(seeds.par_iter())
                .map(|((_, tape), (dp, ds))| {
                    let mut g = Params::zeros(&model.config);
                    model.backward(tape, dp.view(), ds.view(), &mut g).map(|_| g)
                })
                .collect::<Result<Vec<_>, _>>()?;
            // fixed-order reduction keeps results independent of the thread count
            let mut total = Params::zeros(&model.config);
            for g in &parts {
                total.add_scaled(g, 1.0);
            }
            Some(total)
        } else {
            None
        };
        Ok(PassResult {
            loss,
            frames: frames.len(),
            epdms,
            ec: ec_sum,
            grads,
        })
    }
}

fn group_batches(dataset: &Dataset, clips: &[usize], batch_size: usize) -> Vec<Vec<FrameRef>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    for &c in clips {
        current.extend(dataset.frames_of(&[c]));
        if current.len() >= batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

pub fn train(
    dataset: &Dataset,
    vocab: &Vocabulary,
    table: &RewardTable,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(dataset, vocab, table, config, &mut |_| {})
}

/// Trains from a seeded initialization and calls `progress` with every log row.
pub fn train_with_progress(
    dataset: &Dataset,
    vocab: &Vocabulary,
    table: &RewardTable,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRow),
) -> Result<TrainOutcome, TrainError> {
    config.validate(vocab.len())?;
    table.verify(dataset, vocab)?;
    let prefix = config.prefix(vocab.len());
    let actions = vocab.prefix(prefix);
    let (train_clips, held_clips) = dataset.split(config.holdout_every);
    let held_frames = dataset.frames_of(&held_clips);

    let mut scenes: Vec<Option<RasterScene>> = vec![None; dataset.frame_count()];
    let cached: Vec<(usize, RasterScene)> = dataset
        .frames_of(&train_clips)
        .par_iter()
        .map(|f| (f.global, rasterize(&dataset.clips[f.clip].context(f.frame), config.model.grid)))
        .collect();
    for (g, s) in cached {
        scenes[g] = Some(s);
    }
    let ctx = Context {
        dataset,
        table,
        config,
        prefix,
        tokens: tokenize_vocab(actions).mapv(|v| v as f32),
        ec: EcIndicator::new(actions, config.reward.ec),
        lambda: config.effective_lambda(),
        scenes,
    };

    let mut model = ScorerModel::<f32>::new(config.model, config.seed)?;
    let mut optimizer = OptimizerState::new(&config.model);
    let adam = AdamConfig::new(config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7452_4149_4E00_0000);
    let mut log = Vec::new();

    let held_row = |model: &ScorerModel<f32>, epoch: usize, rng: &mut ChaCha8Rng| -> Result<EpochRow, TrainError> {
        let uniforms: Vec<f64> = held_frames.iter().map(|_| rng.random()).collect();
        let pass = ctx.pass(model, &held_frames, &uniforms, false)?;
        let report = evaluate_open_loop(
            &Selector::Model {
                model,
                weights: config.inference,
            },
            dataset,
            &held_frames,
            vocab,
            prefix,
            table,
            &config.reward,
        )?;
        Ok(EpochRow {
            epoch,
            split: "heldout",
            mean_epdms: report.mean_epdms,
            mean_ec: report.mean_ec,
            loss: pass.loss / pass.frames.max(1) as f64,
        })
    };

    if !held_frames.is_empty() {
        let row = held_row(&model, 0, &mut rng)?;
        progress(&row);
        log.push(row);
    }

    let mut order = train_clips.clone();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut frames, mut epdms, mut ec) = (0.0, 0, 0.0, 0.0);
        for batch in group_batches(dataset, &order, config.batch_size) {
            let uniforms: Vec<f64> = batch.iter().map(|_| rng.random()).collect();
            let pass = ctx.pass(&model, &batch, &uniforms, true)?;
            if !pass.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let grads = pass.grads.expect("gradients requested");
            adam_step(&mut model.params, &grads, &mut optimizer, &adam);
            if !model.params.all_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            loss += pass.loss;
            frames += pass.frames;
            epdms += pass.epdms;
            ec += pass.ec;
            step += 1;
        }
        let n = frames.max(1) as f64;
        let row = EpochRow {
            epoch,
            split: "train",
            mean_epdms: epdms / n,
            mean_ec: ec / n,
            loss: loss / n,
        };
        progress(&row);
        log.push(row);
        if !held_frames.is_empty() {
            let row = held_row(&model, epoch, &mut rng)?;
            progress(&row);
            log.push(row);
        }
    }

    let reward_hash = table.content_hash();
    let meta = serde_json::json!({
        "train": config,
        "prefix": prefix,
        "steps": step,
        "dataset_hash": format!("{:016x}", dataset.hash()),
        "vocab_hash": format!("{:016x}", vocab.content_hash()),
        "reward_hash": format!("{reward_hash:016x}"),
    });
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.model,
            params: model.params,
            optimizer,
            meta,
        },
        log,
    })
}

