use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub tool_version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn artifact(path: &Path) -> Result<Artifact> {
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
    })
}

pub struct ManifestBuilder {
    command: String,
    started: u64,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self { command: command.to_string(), started: now_ms() }
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[PathBuf],
        artifacts: &[PathBuf],
    ) -> Result<RunManifest> {
        Ok(RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config,
            seed,
            inputs: inputs.iter().map(|p| artifact(p)).collect::<Result<_>>()?,
            artifacts: artifacts.iter().map(|p| artifact(p)).collect::<Result<_>>()?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        })
    }
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
