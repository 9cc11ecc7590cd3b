//! Run manifest: written atomically when a command starts and rewritten when
//! it ends, listing every file the run produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    /// `git describe` of the working tree when available, else the crate
    /// version.
    pub revision: String,
    pub seed: u64,
    pub dataset: Option<String>,
    pub dataset_hash: Option<String>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub status: String,
    pub artifacts: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn revision() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("seqrec {}", env!("CARGO_PKG_VERSION")))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub struct ManifestWriter {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    pub fn start(
        dir: &Path,
        command: &str,
        config: serde_json::Value,
        seed: u64,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let writer = ManifestWriter {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config,
                revision: revision(),
                seed,
                dataset: None,
                dataset_hash: None,
                started_at: unix_now(),
                finished_at: None,
                status: "running".into(),
                artifacts: Vec::new(),
            },
        };
        writer.flush()?;
        Ok(writer)
    }

    pub fn set_dataset(&mut self, source: String, hash: String) -> std::io::Result<()> {
        self.manifest.dataset = Some(source);
        self.manifest.dataset_hash = Some(hash);
        self.flush()
    }

    /// Records an artifact by its path relative to the run directory.
    pub fn add(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        if !self.manifest.artifacts.contains(&rel) {
            self.manifest.artifacts.push(rel);
        }
    }

    pub fn finish(mut self, status: &str) -> std::io::Result<RunManifest> {
        // pick up anything written into the run directory
        let mut found: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != FILE_NAME))
            .collect();
        found.sort();
        for p in found {
            self.add(&p);
        }
        self.manifest.finished_at = Some(unix_now());
        self.manifest.status = status.to_string();
        self.flush()?;
        Ok(self.manifest)
    }

    fn flush(&self) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(FILE_NAME), &json)
    }
}
