use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    /// False for timing-dependent outputs that differ between identical runs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub resolved: serde_json::Value,
    pub artifacts: BTreeMap<String, Artifact>,
}

/// Output directory whose files are written through a temporary name and
/// renamed into place, and recorded with their checksums.
pub struct OutDir {
    pub dir: PathBuf,
    artifacts: BTreeMap<String, Artifact>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `write` against a temporary path, then renames it to `name`.
    pub fn write_with(
        &mut self,
        name: &str,
        deterministic: bool,
        write: impl FnOnce(&Path) -> nnpot_core::Result<()>,
    ) -> Result<PathBuf> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        if let Err(e) = write(&tmp) {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("writing {}", target.display()));
        }
        fs::rename(&tmp, &target).with_context(|| format!("renaming into {}", target.display()))?;
        let bytes = fs::read(&target)?;
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
                deterministic,
            },
        );
        Ok(target)
    }

    pub fn write_bytes(&mut self, name: &str, deterministic: bool, bytes: &[u8]) -> Result<PathBuf> {
        self.write_with(name, deterministic, |p| Ok(fs::write(p, bytes)?))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, deterministic: bool, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, deterministic, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, deterministic: bool, rows: &[T]) -> Result<PathBuf> {
        self.write_with(name, deterministic, |p| nnpot_core::decomp::write_csv_rows(rows, p))
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.artifacts = std::mem::take(&mut self.artifacts);
        manifest.out_dir = self.dir.clone();
        self.write_json("manifest.json", false, &manifest)?;
        Ok(manifest)
    }
}
