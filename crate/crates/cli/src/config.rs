//! Preset values with optional JSON overrides layered on top.

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use trajscore::evalrun::RolloutConfig;
use trajscore::train::{Preset, TrainConfig};
use trajscore::vocab::VocabConfig;
use trajscore::world::{FamilyCounts, GeneratorConfig};

use crate::manifest::Usage;
use crate::Common;

const SECTIONS: [&str; 4] = ["generator", "vocab", "train", "rollout"];

#[derive(Debug, Clone)]
pub struct Settings {
    pub generator: GeneratorConfig,
    pub vocab: VocabConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
}

/// Object fields of `patch` replace those of `base`, recursively.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn layer<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, section: &str) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(patch) = patch {
        merge(&mut v, patch);
    }
    serde_json::from_value(v).map_err(|e| Usage(format!("config section \"{section}\": {e}")).into())
}

pub fn load(common: &Common) -> Result<Settings> {
    let preset = Preset::by_name(&common.preset)
        .ok_or_else(|| Usage(format!("unknown preset {:?}, expected tiny, desk or paper-scale", common.preset)))?;
    let overrides = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
            let Value::Object(map) = v else {
                return Err(Usage(format!("{}: expected a JSON object", path.display())).into());
            };
            if let Some(k) = map.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
                return Err(Usage(format!("{}: unknown section {k:?}", path.display())).into());
            }
            map
        }
        None => Default::default(),
    };
    let generator = GeneratorConfig {
        counts: FamilyCounts::even(preset.clips),
        ..Default::default()
    };
    let vocab = VocabConfig {
        candidates: preset.candidates,
        size: preset.vocab_size,
        ..Default::default()
    };
    Ok(Settings {
        generator: layer(&generator, overrides.get("generator"), "generator")?,
        vocab: layer(&vocab, overrides.get("vocab"), "vocab")?,
        train: layer(&preset.train, overrides.get("train"), "train")?,
        rollout: layer(&RolloutConfig::default(), overrides.get("rollout"), "rollout")?,
    })
}
