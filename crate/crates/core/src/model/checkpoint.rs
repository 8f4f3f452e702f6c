use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params, ScorerModel};
use crate::codec::{digest64, ByteReader, ByteWriter};
use crate::error::{FormatError, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ZTRSCKP1";

/// Adam moment estimates in parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Params<f32>,
    pub v: Params<f32>,
}

impl OptimizerState {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            step: 0,
            m: Params::zeros(config),
            v: Params::zeros(config),
        }
    }
}

/// Trained parameters with optimizer state and a free-form JSON echo of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub optimizer: OptimizerState,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
}

fn write_data(w: &mut ByteWriter, p: &Params<f32>) {
    for (_, t) in p.tensors() {
        for v in t.iter() {
            w.f32(*v);
        }
    }
}

fn read_data(r: &mut ByteReader, p: &mut Params<f32>) -> Result<(), FormatError> {
    for (_, mut t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.f32("optimizer moments")?;
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn model(&self) -> Result<ScorerModel<f32>, ModelError> {
        ScorerModel::with_params(self.config, self.params.clone())
    }

    fn body(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        let tensors = self.params.tensors();
        w.u32(tensors.len() as u32);
        for (name, t) in &tensors {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.ndim() as u32);
            for d in t.shape() {
                w.u32(*d as u32);
            }
            for v in t.iter() {
                w.f32(*v);
            }
        }
        w.u64(self.optimizer.step);
        write_data(&mut w, &self.optimizer.m);
        write_data(&mut w, &self.optimizer.v);
        let header = serde_json::to_vec(&Header {
            model: self.config,
            meta: self.meta.clone(),
        })
        .expect("config serializes");
        w.u32(header.len() as u32);
        w.bytes(&header);
        w.into_inner()
    }

    /// Digest of everything but the trailing hash.
    pub fn content_hash(&self) -> u64 {
        digest64(&self.body())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = self.body();
        let h = digest64(&body);
        body.extend_from_slice(&h.to_le_bytes());
        body
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = ByteReader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let count = r.u32("tensor count")? as usize;
        let mut raw: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
        for _ in 0..count {
            let len = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| FormatError::Malformed("tensor name is not utf-8".into()))?;
            let ndim = r.u32("tensor rank")? as usize;
            let dims = (0..ndim).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let data = (0..dims.iter().product::<usize>())
                .map(|_| r.f32("tensor data"))
                .collect::<Result<Vec<_>, _>>()?;
            raw.insert(name, (dims, data));
        }
        let step = r.u64("optimizer step")?;
        let opt_start = r.position();
        // moments follow in parameter order; their size is only known once the config is read
        let floats: usize = raw.values().map(|(_, d)| d.len()).sum();
        r.take(2 * floats * 4, "optimizer moments")?;
        let len = r.u32("config length")? as usize;
        let header: Header = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| FormatError::Json { line: 1, source: e })?;
        let body_end = r.position();
        let stored = r.u64("content hash")?;
        r.finish()?;
        let computed = digest64(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::HashMismatch { stored, computed }.into());
        }
        header.model.validate()?;

        let mut params = Params::<f32>::zeros(&header.model);
        for (name, mut t) in params.tensors_mut() {
            let (dims, data) = raw.remove(&name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if dims != t.shape() {
                return Err(ModelError::Shape {
                    what: "checkpoint tensor",
                    expected: t.shape().to_vec(),
                    got: dims,
                });
            }
            t.iter_mut().zip(data).for_each(|(d, s)| *d = s);
        }
        if let Some(extra) = raw.keys().next() {
            return Err(FormatError::Malformed(format!("unexpected tensor {extra}")).into());
        }
        let mut optimizer = OptimizerState::new(&header.model);
        optimizer.step = step;
        let mut r = ByteReader::new(&bytes[opt_start..]);
        read_data(&mut r, &mut optimizer.m)?;
        read_data(&mut r, &mut optimizer.v)?;
        Ok(Self {
            config: header.model,
            params,
            optimizer,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RasterScene;
    use ndarray::{Array2, Array3};

    fn sample() -> Checkpoint {
        let c = ModelConfig::tiny();
        let mut optimizer = OptimizerState::new(&c);
        optimizer.step = 17;
        optimizer.m = Params::init(&c, 3);
        optimizer.v = Params::filled(&c, 0.25);
        Checkpoint {
            config: c,
            params: Params::init(&c, 2),
            optimizer,
            meta: serde_json::json!({"dataset_hash": "00ff", "epochs": 3}),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let scene = RasterScene {
            data: Array3::from_elem((6, 8, 8), 0.5),
        };
        let tok = Array2::from_elem((3, 32), 0.1f32);
        let a = ck.model().unwrap().forward(&scene, tok.view()).unwrap().0;
        let b = back.model().unwrap().forward(&scene, tok.view()).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        for at in [9, bytes.len() / 2, bytes.len() - 20] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x10;
            assert!(Checkpoint::from_bytes(&bad).is_err(), "byte {at}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
