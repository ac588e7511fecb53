use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Everything needed to replay a run: the command, its resolved configuration and
/// the files it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
    /// Resolved configuration; for studies this is the full scenario.
    pub config: toml::Table,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: toml::Table) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
            config,
        }
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished = now();
        let path = out_dir.join(format!("{}_manifest.toml", self.command));
        let text = toml::to_string(&self).context("serializing run manifest")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Serializes any config struct into a TOML table for the manifest.
pub fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    let text = toml::to_string(value).context("serializing configuration")?;
    Ok(toml::from_str(&text)?)
}
