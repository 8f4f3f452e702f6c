use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{argmax, random_index, select_action, InferenceWeights};
use crate::error::ModelError;
use crate::model::{rasterize, tokenize_vocab, ScorerModel};
use crate::reward::{aggregate_epdms, EcIndicator, MetricVector, RewardConfig, RewardTable, METRIC_COUNT, METRIC_NAMES};
use crate::vocab::Vocabulary;
use crate::world::{Dataset, FrameRef};

/// How each frame's action is chosen.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a> {
    Model {
        model: &'a ScorerModel<f32>,
        weights: InferenceWeights,
    },
    /// Best aggregated table score.
    Oracle,
    Random {
        seed: u64,
    },
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameRecord {
    pub clip: usize,
    pub frame: usize,
    pub global: usize,
    pub action: usize,
    /// Table metrics with `ec` taken against the previous selection in the clip.
    pub metrics: MetricVector,
    /// Aggregate with `ec = 1`, as stored in the table.
    pub epdms: f64,
    pub epdms_with_ec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenLoopReport {
    pub frames: usize,
    pub actions: usize,
    pub mean_epdms: f64,
    pub mean_epdms_with_ec: f64,
    pub mean_ec: f64,
    pub mean_metrics: [f64; METRIC_COUNT],
    pub records: Vec<FrameRecord>,
}

impl OpenLoopReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip,frame,global,action,epdms,epdms_with_ec");
        for n in METRIC_NAMES {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},{},{}", r.clip, r.frame, r.global, r.action, r.epdms, r.epdms_with_ec);
            for v in r.metrics.to_array() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Summary without the per-frame records.
    pub fn summary_json(&self) -> serde_json::Value {
        let metrics: serde_json::Map<String, serde_json::Value> = METRIC_NAMES
            .iter()
            .zip(self.mean_metrics)
            .map(|(n, v)| (n.to_string(), v.into()))
            .collect();
        serde_json::json!({
            "frames": self.frames,
            "actions": self.actions,
            "mean_epdms": self.mean_epdms,
            "mean_epdms_with_ec": self.mean_epdms_with_ec,
            "mean_ec": self.mean_ec,
            "mean_metrics": metrics,
        })
    }
}

fn choose(
    selector: &Selector,
    dataset: &Dataset,
    f: &FrameRef,
    prefix: usize,
    table: &RewardTable,
    config: &RewardConfig,
    tokens: Option<&ndarray::Array2<f32>>,
) -> Result<usize, ModelError> {
    Ok(match selector {
        Selector::Model { model, weights } => {
            let scene = rasterize(&dataset.clips[f.clip].context(f.frame), model.config.grid);
            let (out, _) = model.forward(&scene, tokens.expect("model tokens").view())?;
            select_action(&out.policy(), out.head_scores().view(), weights)
        }
        Selector::Oracle => argmax(&table.epdms_row(f.global, prefix, &config.weights)),
        Selector::Random { seed } => random_index(*seed, f.global as u64, prefix),
        Selector::Fixed(i) => (*i).min(prefix - 1),
    })
}

/// Scores the selector's choice on each frame against the reward table,
/// restricted to the first `prefix` actions.
///
/// `frames` should list each clip's frames in order; consistency is measured
/// against the previous listed frame of the same clip and is 1 otherwise.
pub fn evaluate_open_loop(
    selector: &Selector,
    dataset: &Dataset,
    frames: &[FrameRef],
    vocab: &Vocabulary,
    prefix: usize,
    table: &RewardTable,
    config: &RewardConfig,
) -> Result<OpenLoopReport, ModelError> {
    if prefix == 0 || prefix > vocab.len() || prefix > table.action_count() {
        return Err(ModelError::Config(format!(
            "inference prefix {prefix} must be in 1..={}",
            vocab.len().min(table.action_count())
        )));
    }
    let tokens = matches!(selector, Selector::Model { .. }).then(|| tokenize_vocab(vocab.prefix(prefix)).mapv(|v| v as f32));
    let choices = frames
        .par_iter()
        .map(|f| choose(selector, dataset, f, prefix, table, config, tokens.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;

    let ec = EcIndicator::new(vocab.prefix(prefix), config.ec);
    let mut records = Vec::with_capacity(frames.len());
    let mut previous: Option<(FrameRef, usize)> = None;
    for (f, a) in frames.iter().zip(choices) {
        let ec_value = match previous {
            Some((p, pa)) if p.clip == f.clip && p.frame + 1 == f.frame => {
                if ec.consistent(pa, a) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0,
        };
        let table_mv = table.get(f.global, a);
        let metrics = table_mv.with_ec(ec_value);
        records.push(FrameRecord {
            clip: f.clip,
            frame: f.frame,
            global: f.global,
            action: a,
            metrics,
            epdms: aggregate_epdms(&table_mv.with_ec(1.0), &config.weights),
            epdms_with_ec: aggregate_epdms(&metrics, &config.weights),
        });
        previous = Some((*f, a));
    }

    let n = records.len().max(1) as f64;
    let mean = |g: &dyn Fn(&FrameRecord) -> f64| records.iter().map(g).sum::<f64>() / n;
    let mut mean_metrics = [0.0; METRIC_COUNT];
    for (i, m) in mean_metrics.iter_mut().enumerate() {
        *m = mean(&|r| r.metrics.to_array()[i]);
    }
    Ok(OpenLoopReport {
        frames: records.len(),
        actions: prefix,
        mean_epdms: mean(&|r| r.epdms),
        mean_epdms_with_ec: mean(&|r| r.epdms_with_ec),
        mean_ec: mean_metrics[8],
        mean_metrics,
        records,
    })
}
