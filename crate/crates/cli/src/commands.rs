use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use trajscore::codec::digest64;
use trajscore::evalrun::{
    evaluate_open_loop, rollout_closed_loop, EpisodeResult, ModelPlanner, OraclePlanner, Planner, RandomPlanner,
    Selector,
};
use trajscore::model::Checkpoint;
use trajscore::reward::{build_reward_table, RewardTable};
use trajscore::train::{metrics_csv, train_with_progress, Paradigm, TrainConfig};
use trajscore::vocab::{build_vocabulary, Vocabulary};
use trajscore::world::{generate_dataset, read_dataset, write_dataset, Dataset, FamilyCounts};

use crate::config::{self, Settings};
use crate::manifest::{check_sidecar, expect_equal, hex, RunManifest, Usage};
use crate::{Common, SelectorKind, Split};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    check_sidecar(path)?;
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    check_sidecar(path)?;
    Vocabulary::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_table(path: &Path) -> Result<RewardTable> {
    check_sidecar(path)?;
    RewardTable::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    check_sidecar(path)?;
    Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))
}

fn meta_str<'a>(ck: &'a Checkpoint, key: &str, path: &Path) -> Result<&'a str> {
    ck.meta[key]
        .as_str()
        .with_context(|| format!("{}: checkpoint metadata lacks {key}", path.display()))
}

/// The vocabulary must be the one the checkpoint was trained against.
fn check_checkpoint_vocab(ck: &Checkpoint, ck_path: &Path, vocab: &Vocabulary, vocab_path: &Path) -> Result<()> {
    let trained = meta_str(ck, "vocab_hash", ck_path)?;
    expect_equal(vocab_path, &format!("vocabulary (checkpoint {})", ck_path.display()), trained, &hex(vocab.content_hash()))
}

fn checkpoint_train(ck: &Checkpoint) -> Option<TrainConfig> {
    serde_json::from_value(ck.meta["train"].clone()).ok()
}

fn resolve_prefix(flag: Option<usize>, ck: Option<&Checkpoint>, vocab: &Vocabulary) -> Result<usize> {
    let from_ck = ck.and_then(|c| c.meta["prefix"].as_u64()).map(|p| p as usize);
    let prefix = flag.or(from_ck).unwrap_or(vocab.len());
    if prefix == 0 || prefix > vocab.len() {
        return Err(Usage(format!("inference vocab size {prefix} must be in 1..={}", vocab.len())).into());
    }
    Ok(prefix)
}

pub fn gen_scenarios(common: &Common, out: &Path, clips: Option<usize>) -> Result<()> {
    let mut s = config::load(common)?;
    if let Some(n) = clips {
        s.generator.counts = FamilyCounts::even(n);
    }
    let ds = generate_dataset(&s.generator, common.seed)?;
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(&ds, BufWriter::new(f))?;
    let mut m = RunManifest::new(common.seed);
    m.output("dataset", out, ds.hash())?;
    m.chain.dataset = Some(hex(ds.hash()));
    m.write(out)?;
    println!(
        "{} clips, {} frames -> {} (dataset {})",
        ds.clips.len(),
        ds.frame_count(),
        out.display(),
        hex(ds.hash())
    );
    Ok(())
}

pub fn build_vocab(common: &Common, out: &Path, size: Option<usize>, candidates: Option<usize>) -> Result<()> {
    let mut s = config::load(common)?;
    s.vocab.size = size.unwrap_or(s.vocab.size);
    s.vocab.candidates = candidates.unwrap_or(s.vocab.candidates);
    if s.vocab.size == 0 || s.vocab.size > s.vocab.candidates {
        return Err(Usage(format!("vocab size {} must be in 1..={}", s.vocab.size, s.vocab.candidates)).into());
    }
    let vocab = build_vocabulary(&s.vocab, &s.generator.ego, common.seed)?;
    vocab.save(out)?;
    let mut m = RunManifest::new(common.seed);
    m.output("vocabulary", out, vocab.content_hash())?;
    m.chain.vocab = Some(hex(vocab.content_hash()));
    m.write(out)?;
    println!("{} actions -> {} (vocabulary {})", vocab.len(), out.display(), hex(vocab.content_hash()));
    Ok(())
}

pub fn build_rewards(
    common: &Common,
    dataset: &Path,
    vocab_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let s = config::load(common)?;
    let ds = load_dataset(dataset)?;
    let vocab = load_vocab(vocab_path)?;
    let mut m = RunManifest::new(common.seed);
    if let Some(ck_path) = checkpoint {
        let ck = load_checkpoint(ck_path)?;
        check_checkpoint_vocab(&ck, ck_path, &vocab, vocab_path)?;
        m.input("checkpoint", ck_path, ck.content_hash())?;
    }
    let table = build_reward_table(&ds, &vocab, &s.generator.ego, &s.train.reward);
    table.save(out)?;
    m.input("dataset", dataset, ds.hash())?;
    m.input("vocabulary", vocab_path, vocab.content_hash())?;
    m.output("rewards", out, table.content_hash())?;
    m.chain.dataset = Some(hex(ds.hash()));
    m.chain.vocab = Some(hex(vocab.content_hash()));
    m.chain.rewards = Some(hex(table.content_hash()));
    m.write(out)?;
    println!(
        "{} frames x {} actions -> {} (rewards {})",
        table.frame_count(),
        table.action_count(),
        out.display(),
        hex(table.content_hash())
    );
    Ok(())
}

pub struct TrainInputs {
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub rewards: PathBuf,
    pub paradigm: Option<Paradigm>,
    pub vocab_size: Option<usize>,
    pub epochs: Option<usize>,
}

pub fn train(common: &Common, inp: &TrainInputs, out: &Path) -> Result<()> {
    let Settings { train: mut config, .. } = config::load(common)?;
    let ds = load_dataset(&inp.dataset)?;
    let vocab = load_vocab(&inp.vocab)?;
    let table = load_table(&inp.rewards)?;
    table.verify(&ds, &vocab).with_context(|| format!("checking {}", inp.rewards.display()))?;
    config.seed = common.seed;
    config.paradigm = inp.paradigm.unwrap_or(config.paradigm);
    config.vocab_prefix = inp.vocab_size.or(config.vocab_prefix);
    config.epochs = inp.epochs.unwrap_or(config.epochs);
    if let Err(e) = config.validate(vocab.len()) {
        return Err(Usage(e.to_string()).into());
    }
    let outcome = train_with_progress(&ds, &vocab, &table, &config, &mut |r| {
        println!(
            "epoch {:>3} {:<8} epdms {:.4} ec {:.4} loss {:.5}",
            r.epoch, r.split, r.mean_epdms, r.mean_ec, r.loss
        );
    })?;
    let ck = outcome.checkpoint;
    ck.save(out)?;
    let metrics_path = with_suffix(out, ".metrics.csv");
    let csv = metrics_csv(&outcome.log);
    write_text(&metrics_path, &csv)?;
    let mut m = RunManifest::new(common.seed);
    m.input("dataset", &inp.dataset, ds.hash())?;
    m.input("vocabulary", &inp.vocab, vocab.content_hash())?;
    m.input("rewards", &inp.rewards, table.content_hash())?;
    m.output("checkpoint", out, ck.content_hash())?;
    m.output("metrics", &metrics_path, digest64(csv.as_bytes()))?;
    m.chain.dataset = Some(hex(ds.hash()));
    m.chain.vocab = Some(hex(vocab.content_hash()));
    m.chain.rewards = Some(hex(table.content_hash()));
    m.chain.checkpoint = Some(hex(ck.content_hash()));
    m.write(out)?;
    println!("{} -> {} (checkpoint {})", config.paradigm, out.display(), hex(ck.content_hash()));
    Ok(())
}

pub struct EvalInputs {
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub rewards: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub selector: SelectorKind,
    pub inference_vocab_size: Option<usize>,
    pub split: Split,
}

fn require_checkpoint(kind: SelectorKind, path: Option<&PathBuf>) -> Result<Option<(Checkpoint, PathBuf)>> {
    match (kind, path) {
        (SelectorKind::Model, None) => Err(Usage("the model selector needs --checkpoint".into()).into()),
        (_, Some(p)) => Ok(Some((load_checkpoint(p)?, p.clone()))),
        (_, None) => Ok(None),
    }
}

pub fn eval_open(common: &Common, inp: &EvalInputs, out: &Path) -> Result<()> {
    let s = config::load(common)?;
    let ds = load_dataset(&inp.dataset)?;
    let vocab = load_vocab(&inp.vocab)?;
    let table = load_table(&inp.rewards)?;
    table.verify(&ds, &vocab).with_context(|| format!("checking {}", inp.rewards.display()))?;
    let ck = require_checkpoint(inp.selector, inp.checkpoint.as_ref())?;
    if let Some((c, p)) = &ck {
        check_checkpoint_vocab(c, p, &vocab, &inp.vocab)?;
    }
    let prefix = resolve_prefix(inp.inference_vocab_size, ck.as_ref().map(|c| &c.0), &vocab)?;
    let every = ck
        .as_ref()
        .and_then(|(c, _)| checkpoint_train(c))
        .map_or(s.train.holdout_every, |t| t.holdout_every);
    let (train_clips, held) = ds.split(every);
    let frames = match inp.split {
        Split::Heldout => ds.frames_of(&held),
        Split::Train => ds.frames_of(&train_clips),
        Split::All => ds.all_frames(),
    };
    if frames.is_empty() {
        return Err(Usage(format!("split {:?} of {} has no frames", inp.split, inp.dataset.display())).into());
    }
    let model = ck.as_ref().map(|(c, _)| c.model()).transpose()?;
    let selector = match (inp.selector, &model) {
        (SelectorKind::Model, Some(model)) => Selector::Model {
            model,
            weights: s.train.inference,
        },
        (SelectorKind::Oracle, _) => Selector::Oracle,
        _ => Selector::Random { seed: common.seed },
    };
    let report = evaluate_open_loop(&selector, &ds, &frames, &vocab, prefix, &table, &s.train.reward)?;
    write_text(out, &report.to_csv())?;
    let mut summary = report.summary_json();
    summary["selector"] = json!(format!("{:?}", inp.selector).to_lowercase());
    summary["split"] = json!(format!("{:?}", inp.split).to_lowercase());
    summary["prefix"] = json!(prefix);
    let summary_path = with_suffix(out, ".summary.json");
    let summary_text = serde_json::to_string_pretty(&summary)? + "\n";
    write_text(&summary_path, &summary_text)?;
    let mut m = RunManifest::new(common.seed);
    m.input("dataset", &inp.dataset, ds.hash())?;
    m.input("vocabulary", &inp.vocab, vocab.content_hash())?;
    m.input("rewards", &inp.rewards, table.content_hash())?;
    if let Some((c, p)) = &ck {
        m.input("checkpoint", p, c.content_hash())?;
        m.chain.checkpoint = Some(hex(c.content_hash()));
    }
    m.output("frames", out, digest64(report.to_csv().as_bytes()))?;
    m.output("summary", &summary_path, digest64(summary_text.as_bytes()))?;
    m.chain.dataset = Some(hex(ds.hash()));
    m.chain.vocab = Some(hex(vocab.content_hash()));
    m.chain.rewards = Some(hex(table.content_hash()));
    m.write(out)?;
    println!(
        "{} frames, prefix {prefix}: mean EPDMS {:.4}, mean EC {:.4}",
        report.frames, report.mean_epdms, report.mean_ec
    );
    Ok(())
}

pub struct RolloutInputs {
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub planner: SelectorKind,
    pub inference_vocab_size: Option<usize>,
    pub limit: Option<usize>,
}

pub fn episodes_csv(eps: &[EpisodeResult]) -> String {
    let mut out = String::from("clip_id,family,termination,ticks,route_completion,hd_score\n");
    for e in eps {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{},{},{}",
            e.clip_id, e.family, e.termination, e.ticks, e.route_completion, e.hd_score
        );
    }
    out
}

pub fn rollout(common: &Common, inp: &RolloutInputs, out: &Path) -> Result<()> {
    let s = config::load(common)?;
    let ds = load_dataset(&inp.dataset)?;
    let vocab = load_vocab(&inp.vocab)?;
    let ck = require_checkpoint(inp.planner, inp.checkpoint.as_ref())?;
    if let Some((c, p)) = &ck {
        check_checkpoint_vocab(c, p, &vocab, &inp.vocab)?;
    }
    let prefix = resolve_prefix(inp.inference_vocab_size, ck.as_ref().map(|c| &c.0), &vocab)?;
    let model = ck.as_ref().map(|(c, _)| c.model()).transpose()?;
    let planner: Box<dyn Planner> = match (inp.planner, &model) {
        (SelectorKind::Model, Some(model)) => Box::new(ModelPlanner {
            model,
            weights: s.train.inference,
        }),
        (SelectorKind::Oracle, _) => Box::new(OraclePlanner {
            params: s.rollout.ego,
            reward: s.train.reward,
        }),
        _ => Box::new(RandomPlanner { seed: common.seed }),
    };
    let n = inp.limit.unwrap_or(ds.clips.len()).min(ds.clips.len());
    let actions = vocab.prefix(prefix);
    let episodes = ds.clips[..n]
        .par_iter()
        .enumerate()
        .map(|(i, clip)| rollout_closed_loop(planner.as_ref(), clip, actions, &s.rollout, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let csv = episodes_csv(&episodes);
    write_text(out, &csv)?;
    let json_path = with_suffix(out, ".episodes.json");
    let body = serde_json::to_string(&json!({ "prefix": prefix, "episodes": episodes }))? + "\n";
    write_text(&json_path, &body)?;
    let mut m = RunManifest::new(common.seed);
    m.input("dataset", &inp.dataset, ds.hash())?;
    m.input("vocabulary", &inp.vocab, vocab.content_hash())?;
    if let Some((c, p)) = &ck {
        m.input("checkpoint", p, c.content_hash())?;
        m.chain.checkpoint = Some(hex(c.content_hash()));
    }
    m.output("episodes", out, digest64(csv.as_bytes()))?;
    m.output("trajectories", &json_path, digest64(body.as_bytes()))?;
    m.chain.dataset = Some(hex(ds.hash()));
    m.chain.vocab = Some(hex(vocab.content_hash()));
    m.write(out)?;
    let mean = |f: fn(&EpisodeResult) -> f64| episodes.iter().map(f).sum::<f64>() / episodes.len().max(1) as f64;
    println!(
        "{} episodes: mean HD {:.4}, mean rc {:.4}, collisions {}",
        episodes.len(),
        mean(|e| e.hd_score),
        mean(|e| e.route_completion),
        episodes.iter().filter(|e| e.collided()).count()
    );
    Ok(())
}
