//! Sidecar manifests and the checks run on every input artifact.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trajscore::codec::digest64;

/// A recorded hash disagrees with the artifact on disk or with its upstream.
#[derive(Debug)]
pub struct Mismatch {
    pub file: PathBuf,
    pub what: String,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} hash mismatch, expected {} but found {}",
            self.file.display(),
            self.what,
            self.expected,
            self.found
        )
    }
}

impl std::error::Error for Mismatch {}

/// Bad flag combinations that clap cannot express.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn hex(h: u64) -> String {
    format!("{h:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub role: String,
    pub path: PathBuf,
    /// Digest of the file bytes.
    pub file_hash: String,
    /// Digest of the decoded content, the value carried down the chain.
    pub content_hash: String,
}

/// Content hashes of the upstream chain an artifact was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewards: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<Entry>,
    pub outputs: Vec<Entry>,
    pub chain: Chain,
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(digest64(&bytes)))
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            tool: format!("trajscore {}", env!("CARGO_PKG_VERSION")),
            command: std::env::args().collect(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            chain: Chain::default(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, content: u64) -> Result<()> {
        self.inputs.push(Entry {
            role: role.into(),
            path: path.to_path_buf(),
            file_hash: file_hash(path)?,
            content_hash: hex(content),
        });
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path, content: u64) -> Result<()> {
        self.outputs.push(Entry {
            role: role.into(),
            path: path.to_path_buf(),
            file_hash: file_hash(path)?,
            content_hash: hex(content),
        });
        Ok(())
    }

    /// Writes the sidecar next to `primary`.
    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let path = sidecar(primary);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Compares `path` against the entry its own sidecar recorded for it.
/// Files without a sidecar are accepted with a note, since every artifact
/// still carries its upstream hashes inside.
pub fn check_sidecar(path: &Path) -> Result<Option<RunManifest>> {
    let side = sidecar(path);
    if !side.exists() {
        eprintln!("note: {} has no manifest, checking embedded hashes only", path.display());
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?;
    let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?;
    let name = path.file_name();
    let entry = m
        .outputs
        .iter()
        .find(|e| e.path.file_name() == name)
        .with_context(|| format!("{} does not list {}", side.display(), path.display()))?;
    let found = file_hash(path)?;
    if entry.file_hash != found {
        return Err(Mismatch {
            file: path.to_path_buf(),
            what: "file".into(),
            expected: entry.file_hash.clone(),
            found,
        }
        .into());
    }
    Ok(Some(m))
}

pub fn expect_equal(file: &Path, what: &str, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Mismatch {
            file: file.to_path_buf(),
            what: what.into(),
            expected: expected.into(),
            found: found.into(),
        }
        .into());
    }
    Ok(())
}
