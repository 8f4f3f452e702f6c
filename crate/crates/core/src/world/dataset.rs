use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::ScenarioClip;
use crate::codec::digest64;
use crate::error::FormatError;

pub const SCHEMA_VERSION: u32 = 1;

/// Position of one frame in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRef {
    pub clip: usize,
    pub frame: usize,
    /// Frame-major index over the whole dataset.
    pub global: usize,
}

/// An immutable list of clips with the digest of its canonical serialization.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<ScenarioClip>,
    hash: u64,
    offsets: Vec<usize>,
}

impl Dataset {
    pub fn new(clips: Vec<ScenarioClip>) -> Self {
        let mut buf = Vec::new();
        write_clips(&clips, &mut buf).expect("writing to memory cannot fail");
        let hash = digest64(&buf);
        Self::with_hash(clips, hash)
    }

    fn with_hash(clips: Vec<ScenarioClip>, hash: u64) -> Self {
        let mut offsets = Vec::with_capacity(clips.len() + 1);
        offsets.push(0);
        for c in &clips {
            offsets.push(offsets.last().unwrap() + c.frames.len());
        }
        Self { clips, hash, offsets }
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn frame_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn global_index(&self, clip: usize, frame: usize) -> usize {
        self.offsets[clip] + frame
    }

    pub fn frame_ref(&self, clip: usize, frame: usize) -> FrameRef {
        FrameRef {
            clip,
            frame,
            global: self.global_index(clip, frame),
        }
    }

    /// Every frame of the listed clips, clip by clip.
    pub fn frames_of(&self, clips: &[usize]) -> Vec<FrameRef> {
        clips
            .iter()
            .flat_map(|&c| (0..self.clips[c].frames.len()).map(move |f| (c, f)))
            .map(|(c, f)| self.frame_ref(c, f))
            .collect()
    }

    pub fn all_frames(&self) -> Vec<FrameRef> {
        self.frames_of(&(0..self.clips.len()).collect::<Vec<_>>())
    }

    /// Deterministic split: every `every`-th clip (index ≡ every-1 mod every) is held out.
    pub fn split(&self, every: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.clips.len()).partition(|i| every == 0 || i % every != every - 1)
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    clip: &'a ScenarioClip,
}

#[derive(Deserialize)]
struct RecordIn {
    schema_version: u32,
    #[serde(flatten)]
    clip: ScenarioClip,
}

fn write_clips(clips: &[ScenarioClip], mut w: impl Write) -> Result<(), FormatError> {
    for clip in clips {
        let rec = RecordOut {
            schema_version: SCHEMA_VERSION,
            clip,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| FormatError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes one JSON object per clip, one clip per line.
pub fn write_dataset(ds: &Dataset, w: impl Write) -> Result<(), FormatError> {
    write_clips(&ds.clips, w)
}

pub fn read_dataset(r: impl Read) -> Result<Dataset, FormatError> {
    let mut clips = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| FormatError::Json { line: i + 1, source: e })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(FormatError::SchemaVersion(rec.schema_version));
        }
        if rec.clip.frames.len() < 2 {
            return Err(FormatError::Malformed(format!("clip {} has fewer than 2 frames", rec.clip.id)));
        }
        clips.push(rec.clip);
    }
    Ok(Dataset::new(clips))
}
