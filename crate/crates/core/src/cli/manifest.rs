use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use super::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce a run: the full argument set plus the tool
/// version. Duration is informational and not part of the replayed state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: Command, outputs: Vec<PathBuf>, duration_secs: f64) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            outputs,
            duration_secs,
        }
    }

    /// `<artifact>.manifest.json` beside a file, or `manifest.json` inside a directory.
    pub fn location_for(artifact: &Path) -> PathBuf {
        if artifact.is_dir() {
            artifact.join(MANIFEST_FILE)
        } else {
            let mut name = artifact.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            artifact.with_file_name(name)
        }
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.tool != env!("CARGO_PKG_NAME") {
            anyhow::bail!("manifest was written by {:?}", manifest.tool);
        }
        if manifest.version != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest written by version {}, replaying with {}",
                manifest.version,
                env!("CARGO_PKG_VERSION")
            );
        }
        Ok(manifest)
    }
}
