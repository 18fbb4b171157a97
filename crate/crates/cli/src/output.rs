//! Output directories and the run manifest written next to every result.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    /// Command arguments (output directory and `--jobs` excluded).
    pub config: serde_json::Value,
    /// Resolved degradation spec, generation config, etc.
    pub resolved: BTreeMap<String, serde_json::Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub started_at: u64,
    pub finished_at: u64,
}

fn now() -> u64 {
    match std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        Some(t) => t,
        None => std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Hashes a file, or every file under a directory in sorted order.
pub fn hash_inputs(path: &Path) -> Result<Vec<FileHash>> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MANIFEST_NAME) {
                continue;
            }
            out.extend(hash_inputs(&e)?);
        }
    } else {
        out.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Referenced<'a, T: Serialize> {
    manifest: &'a str,
    #[serde(flatten)]
    result: &'a T,
}

/// Collects a command's outputs under one directory; files are written
/// atomically and the manifest is written last.
pub struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    pub fn new(dir: &Path, command: &str, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                toolkit_version: gptd::VERSION.to_string(),
                config,
                resolved: BTreeMap::new(),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now(),
                finished_at: 0,
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hashes = hash_inputs(path)?;
        self.manifest.inputs.extend(hashes);
        Ok(())
    }

    pub fn resolved<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.manifest
            .resolved
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn seed(&mut self, key: &str, value: u64) {
        self.manifest.seeds.insert(key.to_string(), value);
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        gptd::corpus::write_atomic(&path, bytes)?;
        self.record(name)
    }

    /// Tab-separated or plain-text output, with a leading `#` line naming
    /// the manifest.
    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let s = format!("# manifest: {MANIFEST_NAME}\n{body}");
        self.bytes(name, s.as_bytes())
    }

    pub fn html(&mut self, name: &str, body: &str) -> Result<()> {
        let s = format!("<!-- manifest: {MANIFEST_NAME} -->\n{body}");
        self.bytes(name, s.as_bytes())
    }

    /// JSON object with a `manifest` field added.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let v = Referenced {
            manifest: MANIFEST_NAME,
            result: value,
        };
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        self.bytes(name, s.as_bytes())
    }

    /// Adds a file that something else already wrote into the directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.dir.join(name))?;
        self.manifest.outputs.push(FileHash {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_at = now().max(self.manifest.started_at);
        if std::env::var_os("SOURCE_DATE_EPOCH").is_some() {
            self.manifest.finished_at = self.manifest.started_at;
        }
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        gptd::corpus::write_atomic(&self.dir.join(MANIFEST_NAME), s.as_bytes())?;
        Ok(self.manifest)
    }
}

/// Reads a JSON output written by [`Output::json`].
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}
