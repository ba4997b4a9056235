use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::{Error, Result};

/// Per-run output directory:
/// `manifest.json`, `config.toml`, `checkpoints/`, `samples/`, `plots/`,
/// `metrics.csv`, `metrics.json`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["", "checkpoints", "samples", "plots"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn samples(&self, name: &str) -> PathBuf {
        self.root.join("samples").join(name)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path relative to the run root, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: Vec<String>,
    pub metric_reports: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    /// Writes the manifest and the config echo; called before any training.
    pub fn begin(run: &RunDir, command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.save(&run.file("config.toml"))?;
        let m = RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.seed,
            seeds: BTreeMap::new(),
            checkpoints: Vec::new(),
            metric_reports: Vec::new(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
        };
        m.write(run)?;
        Ok(m)
    }

    pub fn write(&self, run: &RunDir) -> Result<()> {
        let path = run.file("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Records the outcome and rewrites the manifest; the original result
    /// is passed through.
    pub fn finish<T>(mut self, run: &RunDir, result: Result<T>) -> Result<T> {
        self.finished_unix = Some(now());
        self.status = match &result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        };
        let written = self.write(run);
        let value = result?;
        written?;
        Ok(value)
    }
}
