//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `MEDVLMCK`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then the raw tensor
//! data as little-endian `f64`. The header records the model configuration,
//! one `{path, shape, dtype, offset, nbytes}` entry per tensor (offsets are
//! relative to the start of the data section) and free-form string metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use medvlm_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::VlmConfig;
use crate::error::{ModelError, Result};
use crate::params::VlmParams;

pub const MAGIC: &[u8; 8] = b"MEDVLMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: VlmConfig,
    tensors: Vec<TensorEntry>,
    meta: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: VlmConfig,
    pub params: VlmParams,
    pub meta: BTreeMap<String, String>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (path, t) in ckpt.params.iter() {
        let nbytes = (t.len() * 8) as u64;
        tensors.push(TensorEntry {
            path: path.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        tensors,
        meta: ckpt.meta.clone(),
    })
    .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in ckpt.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..data_start])
        .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
    let data = &bytes[data_start..];
    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0u64;
    for e in header.tensors {
        if e.dtype != "f64" {
            return Err(ModelError::Checkpoint(format!("{}: unsupported dtype {}", e.path, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        if e.nbytes != (n * 8) as u64 || e.offset != expected_offset {
            return Err(ModelError::Checkpoint(format!("{}: inconsistent offset or size", e.path)));
        }
        let start = e.offset as usize;
        let end = start + e.nbytes as usize;
        let raw = data
            .get(start..end)
            .ok_or_else(|| ModelError::Checkpoint(format!("{}: data truncated", e.path)))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        expected_offset += e.nbytes;
        if tensors.insert(e.path.clone(), Tensor::new(e.shape, values)?).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {}", e.path)));
        }
    }
    if expected_offset as usize != data.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let params = VlmParams::from_tensors(&header.config, tensors)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        meta: header.meta,
    })
}

/// Write atomically: a temporary file in the target directory, then rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        ModelError::Checkpoint(m) => ModelError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
