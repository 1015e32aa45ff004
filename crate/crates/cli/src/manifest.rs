//! Output directory bookkeeping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use advst_core::audio::wav::{write_wav, WavFormat};
use advst_core::audio::Waveform;
use advst_core::hashing::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub job: String,
    pub config_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Writes files under one root and remembers what it wrote.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: BTreeMap<String, ArtifactEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(path)
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.written.insert(
            rel.to_string(),
            ArtifactEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.target(rel)?;
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(rel, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write_bytes(rel, &text)
    }

    pub fn write_wav(&mut self, rel: &str, w: &Waveform) -> Result<()> {
        let path = self.target(rel)?;
        write_wav(&path, w, WavFormat::Float32)?;
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn artifacts(&self) -> Vec<ArtifactEntry> {
        self.written.values().cloned().collect()
    }

    /// Write `manifest.json` listing every artifact.
    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.artifacts = self.artifacts();
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
