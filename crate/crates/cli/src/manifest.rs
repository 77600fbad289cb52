//! Run manifests: one JSON file per command invocation, written with status
//! `running` before any work and rewritten as `ok` or `failed` afterwards.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT: &str = "cagen-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub status: Status,
    pub error: Option<String>,
    /// Effective arguments and, for training, the parsed run config.
    pub config: serde_json::Value,
    /// SHA-256 of every input file; directories hash their files in name order.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<serde_json::Value>,
    pub outputs: Vec<String>,
    pub timings: Timings,
}

pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Hex SHA-256 of a file, or of every regular file below a directory with
/// relative names and lengths mixed in.
pub fn hash_path(path: &Path) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            let bytes = std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            h.update(rel.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut buf = [0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Manifest name inside output directories.
pub const MANIFEST_FILE: &str = "manifest.json";

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_FILE)
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

impl ManifestWriter {
    /// Hashes the inputs and writes the `running` manifest.
    pub fn start(
        path: PathBuf,
        command: &str,
        config: serde_json::Value,
        inputs: &[&Path],
        seed: Option<serde_json::Value>,
    ) -> anyhow::Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), hash_path(p)?);
        }
        let writer = Self {
            path,
            manifest: RunManifest {
                format: FORMAT.into(),
                command: command.into(),
                status: Status::Running,
                error: None,
                config,
                inputs: hashes,
                seed,
                outputs: Vec::new(),
                timings: Timings {
                    started_unix_ms: unix_ms(),
                    finished_unix_ms: None,
                    wall_seconds: None,
                },
            },
            clock: Instant::now(),
        };
        writer.write()?;
        Ok(writer)
    }

    fn write(&self) -> anyhow::Result<()> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&self.path, json + "\n").with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self, outputs: Vec<PathBuf>, error: Option<String>) -> anyhow::Result<()> {
        self.manifest.status = if error.is_some() { Status::Failed } else { Status::Ok };
        self.manifest.error = error;
        self.manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        self.manifest.timings.finished_unix_ms = Some(unix_ms());
        self.manifest.timings.wall_seconds = Some(self.clock.elapsed().as_secs_f64());
        self.write()
    }
}
