use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Effective configuration after defaults, config file and flags.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path → sha256 of its bytes. Directories list every file.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the manifest → sha256.
    pub outputs: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).with_context(|| format!("cannot list {}", d.display()))? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
        }
    }

    /// Hash an input file, or every file below an input directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            for f in files_under(path)? {
                self.inputs
                    .insert(f.display().to_string(), sha256_file(&f)?);
            }
        } else {
            self.inputs
                .insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    /// Hash outputs given relative to `base` and write the manifest to `path`.
    pub fn finish(mut self, base: &Path, outputs: &[PathBuf], path: &Path) -> Result<()> {
        for rel in outputs {
            self.outputs.insert(
                rel.to_string_lossy().replace('\\', "/"),
                sha256_file(&base.join(rel))?,
            );
        }
        self.finished = chrono::Utc::now().to_rfc3339();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
