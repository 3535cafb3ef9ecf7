use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use grokxor::config::RunConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const BUILD_ID: &str = concat!("grokxor-cli ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub seed: u64,
    pub config: RunConfig,
    pub started_unix: Option<u64>,
    pub finished_unix: Option<u64>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Output directory that records every file written through it.
pub struct Outputs {
    root: PathBuf,
    record_time: bool,
    started: Option<u64>,
    files: Vec<FileEntry>,
}

impl Outputs {
    pub fn create(root: &Path, record_time: bool) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            record_time,
            started: record_time.then(now_unix),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        grokxor::io::write_bytes(&path, bytes)?;
        self.record(rel, bytes);
        Ok(path)
    }

    /// Records a file written elsewhere under the root.
    pub fn adopt(&mut self, rel: &str) -> CliResult<()> {
        let bytes = std::fs::read(self.path(rel))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn record_time(&self) -> bool {
        self.record_time
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(mut self, command: &str, cfg: &RunConfig) -> CliResult<RunManifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            build: BUILD_ID.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            started_unix: self.started,
            finished_unix: self.record_time.then(now_unix),
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        grokxor::io::write_bytes(&self.root.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    Ok(serde_json::from_str(&text)?)
}
