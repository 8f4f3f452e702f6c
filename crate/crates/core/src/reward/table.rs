use std::path::Path;

use rayon::prelude::*;

use crate::codec::{digest64, ByteReader, ByteWriter};
use crate::error::{FormatError, RewardError};
use crate::vocab::Vocabulary;
use crate::world::{Dataset, EgoParams};

use super::simulate::{max_feasible_progress, simulate_pair, PairEval};
use super::{aggregate_epdms, MetricVector, MetricWeights, RewardConfig, METRIC_COUNT};

pub const REWARD_MAGIC: &[u8; 8] = b"ZTRSRWD1";

/// Metric vectors for every (frame, action) pair, frame-major, at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    frames: usize,
    actions: usize,
    dataset_hash: u64,
    vocab_hash: u64,
    rows: Vec<[f32; METRIC_COUNT]>,
}

/// Evaluates every action of `vocab` on every frame of `dataset`.
pub fn build_reward_table(
    dataset: &Dataset,
    vocab: &Vocabulary,
    params: &EgoParams,
    config: &RewardConfig,
) -> RewardTable {
    let refs = dataset.all_frames();
    let per_frame: Vec<Vec<[f32; METRIC_COUNT]>> = refs
        .par_iter()
        .map(|r| {
            let ctx = dataset.clips[r.clip].context(r.frame);
            let evals: Vec<PairEval> = vocab
                .trajectories()
                .iter()
                .map(|t| simulate_pair(&ctx, t, params, &config.comfort))
                .collect();
            let best = max_feasible_progress(&evals);
            evals.iter().map(|e| to_row(&e.metrics(best))).collect()
        })
        .collect();
    RewardTable {
        frames: refs.len(),
        actions: vocab.len(),
        dataset_hash: dataset.hash(),
        vocab_hash: vocab.content_hash(),
        rows: per_frame.into_iter().flatten().collect(),
    }
}

fn to_row(mv: &MetricVector) -> [f32; METRIC_COUNT] {
    mv.to_array().map(|v| v as f32)
}

impl RewardTable {
    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn dataset_hash(&self) -> u64 {
        self.dataset_hash
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn get(&self, frame: usize, action: usize) -> MetricVector {
        MetricVector::from_array(self.rows[frame * self.actions + action].map(|v| v as f64))
    }

    /// All action rows of one frame.
    pub fn frame_rows(&self, frame: usize) -> &[[f32; METRIC_COUNT]] {
        &self.rows[frame * self.actions..(frame + 1) * self.actions]
    }

    /// Aggregated score of the first `n` actions of a frame.
    pub fn epdms_row(&self, frame: usize, n: usize, w: &MetricWeights) -> Vec<f64> {
        (0..n.min(self.actions)).map(|a| aggregate_epdms(&self.get(frame, a), w)).collect()
    }

    /// Frames where no action passes all four penalty metrics.
    pub fn audit(&self) -> Vec<usize> {
        (0..self.frames)
            .filter(|&f| !self.frame_rows(f).iter().any(|r| r[..4].iter().all(|v| *v == 1.0)))
            .collect()
    }

    /// Refuses a table built from other inputs, naming both hashes.
    pub fn verify(&self, dataset: &Dataset, vocab: &Vocabulary) -> Result<(), RewardError> {
        if self.dataset_hash != dataset.hash() {
            return Err(RewardError::HashMismatch {
                what: "dataset",
                expected: dataset.hash(),
                found: self.dataset_hash,
            });
        }
        if self.vocab_hash != vocab.content_hash() {
            return Err(RewardError::HashMismatch {
                what: "vocabulary",
                expected: vocab.content_hash(),
                found: self.vocab_hash,
            });
        }
        if self.frames != dataset.frame_count() || self.actions != vocab.len() {
            return Err(RewardError::Dimensions {
                table_frames: self.frames,
                table_actions: self.actions,
                frames: dataset.frame_count(),
                actions: vocab.len(),
            });
        }
        Ok(())
    }

    fn body(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(REWARD_MAGIC);
        w.u32(self.frames as u32);
        w.u32(self.actions as u32);
        w.u64(self.dataset_hash);
        w.u64(self.vocab_hash);
        for row in &self.rows {
            for v in row {
                w.f32(*v);
            }
        }
        w.into_inner()
    }

    pub fn content_hash(&self) -> u64 {
        digest64(&self.body())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = self.body();
        let h = digest64(&body);
        body.extend_from_slice(&h.to_le_bytes());
        body
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RewardError> {
        let mut r = ByteReader::new(bytes);
        r.magic(REWARD_MAGIC)?;
        let frames = r.u32("frame count")? as usize;
        let actions = r.u32("action count")? as usize;
        let dataset_hash = r.u64("dataset hash")?;
        let vocab_hash = r.u64("vocabulary hash")?;
        let expected = frames * actions * METRIC_COUNT * 4 + 8;
        if r.remaining() != expected {
            return Err(FormatError::Malformed(format!(
                "reward rows and hash hold {} bytes, expected {expected}",
                r.remaining()
            ))
            .into());
        }
        let mut rows = Vec::with_capacity(frames * actions);
        for _ in 0..frames * actions {
            let mut row = [0f32; METRIC_COUNT];
            for v in &mut row {
                *v = r.f32("metric row")?;
            }
            if !MetricVector::from_array(row.map(|v| v as f64)).is_valid() {
                return Err(FormatError::Malformed(format!("metric row {row:?} out of range")).into());
            }
            rows.push(row);
        }
        let body_end = r.position();
        let stored = r.u64("content hash")?;
        r.finish()?;
        let computed = digest64(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::HashMismatch { stored, computed }.into());
        }
        Ok(Self {
            frames,
            actions,
            dataset_hash,
            vocab_hash,
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RewardError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocabulary, VocabConfig};
    use crate::world::{generate_dataset, FamilyCounts, GeneratorConfig};

    fn inputs() -> (Dataset, Vocabulary) {
        let ds = generate_dataset(
            &GeneratorConfig {
                counts: FamilyCounts::even(12),
                frames_per_clip: 2,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let vocab = build_vocabulary(
            &VocabConfig {
                candidates: 400,
                size: 48,
                max_iters: 10,
            },
            &EgoParams::default(),
            5,
        )
        .unwrap();
        (ds, vocab)
    }

    #[test]
    fn table_is_deterministic_round_trips_and_matches_direct_calls() {
        let (ds, vocab) = inputs();
        let cfg = RewardConfig::default();
        let p = EgoParams::default();
        let table = build_reward_table(&ds, &vocab, &p, &cfg);
        assert_eq!(table.to_bytes(), build_reward_table(&ds, &vocab, &p, &cfg).to_bytes());
        let back = RewardTable::from_bytes(&table.to_bytes()).unwrap();
        assert_eq!(back, table);
        table.verify(&ds, &vocab).unwrap();
        assert!(table.audit().is_empty(), "{:?}", table.audit());

        let r = ds.frame_ref(3, 1);
        let ctx = ds.clips[3].context(1);
        let evals: Vec<PairEval> = vocab
            .trajectories()
            .iter()
            .map(|t| simulate_pair(&ctx, t, &p, &cfg.comfort))
            .collect();
        let best = max_feasible_progress(&evals);
        for (a, e) in evals.iter().enumerate() {
            assert_eq!(table.get(r.global, a), e.metrics(best));
        }
    }

    #[test]
    fn mismatched_inputs_are_refused() {
        let (ds, vocab) = inputs();
        let table = build_reward_table(&ds, &vocab, &EgoParams::default(), &RewardConfig::default());
        let other = Vocabulary::from_ordered(vocab.prefix(10).to_vec()).unwrap();
        let err = table.verify(&ds, &other).unwrap_err().to_string();
        assert!(err.contains(&format!("{:016x}", other.content_hash())));
        assert!(err.contains(&format!("{:016x}", vocab.content_hash())));
        let mut bytes = table.to_bytes();
        bytes.pop();
        assert!(RewardTable::from_bytes(&bytes).is_err());
    }
}
