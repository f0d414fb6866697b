//! Run manifest: what was run, with which seeds, and which files it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub label: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Every file in the run directory except the manifest itself.
    pub files: Vec<FileEntry>,
    pub seeds: Vec<SeedEntry>,
    /// Wall-clock seconds per labelled stage; informational only.
    pub timings: Vec<(String, f64)>,
}

/// A run directory that records the files written into it.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn sha256_file(path: &Path) -> std::io::Result<(u64, String)> {
    let bytes = fs::read(path)?;
    Ok((bytes.len() as u64, format!("{:x}", Sha256::digest(&bytes))))
}

impl RunDir {
    /// Creates the directory and writes an incomplete manifest.
    pub fn create(root: &Path, command: &str, config: &ExperimentConfig) -> anyhow::Result<Self> {
        fs::create_dir_all(root)?;
        let manifest = RunManifest {
            command: command.into(),
            config_hash: config.hash(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Incomplete,
            error: None,
            files: Vec::new(),
            seeds: Vec::new(),
            timings: Vec::new(),
        };
        let dir = Self { root: root.to_path_buf(), manifest };
        dir.save()?;
        dir.write("config.toml", config.to_toml().as_bytes())?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        Ok(path)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn seed(&mut self, label: impl Into<String>, seed: u64) {
        self.manifest.seeds.push(SeedEntry { label: label.into(), seed });
    }

    pub fn timing(&mut self, label: impl Into<String>, secs: f64) {
        self.manifest.timings.push((label.into(), secs));
    }

    fn save(&self) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    fn scan(&mut self) -> anyhow::Result<()> {
        let mut files = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.root)?.to_string_lossy().replace('\\', "/");
                if rel == MANIFEST_FILE {
                    continue;
                }
                let (bytes, sha256) = sha256_file(&path)?;
                files.push(FileEntry { path: rel, bytes, sha256 });
            }
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.files = files;
        Ok(())
    }

    /// Lists the files on disk and stamps the manifest with the outcome.
    /// A failed run keeps the `incomplete` status and records the error.
    pub fn finish(&mut self, error: Option<String>) -> anyhow::Result<()> {
        self.scan()?;
        self.manifest.finished_at = Some(now());
        self.manifest.status = if error.is_none() { RunStatus::Complete } else { RunStatus::Incomplete };
        self.manifest.error = error;
        self.save()
    }
}

pub fn read_manifest(root: &Path) -> anyhow::Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_FILE))?)?)
}
