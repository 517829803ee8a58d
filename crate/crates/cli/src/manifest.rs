//! Run manifests: what went in, what came out, and a digest over both that
//! ignores timestamps and absolute locations.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".medvlm.lock";

/// Files that vary between identical runs or are written by the run
/// bookkeeping itself.
const EXCLUDED: &[&str] = &[MANIFEST_FILE, LOCK_FILE, ".lock", "timings.jsonl"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Keyed by role (`config`, `bench`, `checkpoint`, ...).
    pub inputs: BTreeMap<String, FileDigest>,
    /// Output path relative to the output location, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
    pub digest: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_json(v: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("serializable")))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn collect(dir: &Path, prefix: &str, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
        let path = e.path();
        if path.is_dir() {
            collect(&path, &rel, out)?;
        } else if !EXCLUDED.contains(&name.as_str()) && !name.ends_with(".partial") && !name.ends_with(".tmp") {
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Digests of every file under `dir`, excluding run bookkeeping.
pub fn digest_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    collect(dir, "", &mut out)?;
    Ok(out)
}

pub struct ManifestBuilder {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    inputs: BTreeMap<String, FileDigest>,
    started_at: u64,
}

impl ManifestBuilder {
    pub fn new(command: &str, effective_config: &Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config_hash: sha256_json(effective_config),
            seed,
            inputs: BTreeMap::new(),
            started_at: unix_now(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(
            role.into(),
            FileDigest {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            },
        );
        Ok(())
    }

    pub fn finish(self, outputs: BTreeMap<String, String>) -> RunManifest {
        let digest = sha256_json(&json!({
            "tool": "medvlm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": self.inputs.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect::<BTreeMap<_, _>>(),
            "outputs": outputs,
        }));
        RunManifest {
            tool: "medvlm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            started_at: self.started_at,
            finished_at: unix_now(),
            digest,
        }
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// One command per output location at a time.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(path: PathBuf) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} exists: another run is using this output (remove it if that run is dead)", path.display())
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
