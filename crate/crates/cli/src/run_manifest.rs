//! `run.json`: what a command read, which seed it used and what it wrote.
//! Together with the copied config it is enough to repeat the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gazework::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run.json";
/// The resolved config, copied into the run directory.
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    /// SHA-256 of the resolved config text, when the command takes one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    /// Input files and their SHA-256, keyed by role.
    pub inputs: BTreeMap<String, Input>,
    /// Files written, relative to the run directory, sorted.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_seed: None,
            config_sha256: None,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        self.inputs.insert(
            role.to_string(),
            Input {
                path: path.to_path_buf(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    /// Writes the resolved config into the run directory and records its hash.
    pub fn config(&mut self, out: &Path, text: &str) -> Result<()> {
        let path = out.join(CONFIG_COPY);
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        self.config_sha256 = Some(sha256_hex(text.as_bytes()));
        Ok(())
    }

    /// Lists every file under `out` (except this manifest) and writes it.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        let mut files = Vec::new();
        walk(out, out, &mut files)?;
        files.retain(|f| f != RUN_MANIFEST);
        files.sort();
        self.artifacts = files;
        let path = out.join(RUN_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").map_err(|e| io(&path, e))?;
        Ok(path)
    }
}

fn walk(root: &Path, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, files)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            files.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

pub fn io(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidInput(format!("{}: {e}", path.display()))
}
