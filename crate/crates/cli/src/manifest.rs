use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: String, data: &[u8]) -> Self {
        Self { path, bytes: data.len() as u64, sha256: hex::encode(Sha256::digest(data)) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one command invocation. Timings are the only field that
/// varies between otherwise identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub exit_code: u8,
    pub error: Option<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
    pub results: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<FileDigest>,
}

pub struct Run {
    out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                status: "running".into(),
                exit_code: 0,
                error: None,
                seed: None,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                timings: Vec::new(),
                warnings: Vec::new(),
                results: serde_json::Map::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn echo<T: Serialize>(&mut self, config: &T) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.push(FileDigest::of(path.display().to_string(), &data));
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.manifest.warnings.push(message.into());
    }

    pub fn result<T: Serialize>(&mut self, key: &str, value: T) {
        self.manifest.results.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.manifest.timings.push(StageTiming { stage: name.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    /// Renders an artifact in memory, writes it under the output directory
    /// and records its digest.
    pub fn emit<E>(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> anyhow::Result<()>
    where
        E: Into<anyhow::Error>,
    {
        let mut buf = Vec::new();
        render(&mut buf).map_err(Into::into).with_context(|| format!("rendering {name}"))?;
        let path = self.out_dir.join(name);
        fs::write(&path, &buf).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(FileDigest::of(name.into(), &buf));
        Ok(())
    }

    /// Writes `manifest.json`; it lists itself nowhere, so it never
    /// appears in its own inventory.
    pub fn finish(mut self, exit_code: u8, error: Option<String>) -> std::io::Result<()> {
        self.manifest.exit_code = exit_code;
        self.manifest.status = if exit_code == 0 { "ok" } else { "failed" }.into();
        self.manifest.error = error;
        fs::create_dir_all(&self.out_dir)?;
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::other)?;
        fs::write(self.out_dir.join("manifest.json"), text + "\n")
    }
}
