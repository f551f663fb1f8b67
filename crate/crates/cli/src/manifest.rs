//! Run manifests and artifact output.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: &'static str,
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Resolved options, after defaults.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Excluded from determinism comparisons.
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Records the SHA-256 of an input file, read as bytes.
    pub fn add_input(&mut self, role: &'static str, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(InputDigest {
            role,
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Artifact<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    pub result: &'a T,
}

/// Pretty JSON with a trailing newline, to `out` or stdout.
pub fn write_json<T: Serialize>(out: Option<&PathBuf>, manifest: &RunManifest, result: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&Artifact { manifest, result })?;
    text.push('\n');
    write_text(out, &text)
}

pub fn write_text(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}
