//! The benchmark record shared by every builder and by the evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const OPTION_KEYS: [&str; 10] = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub key: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkInstance {
    pub id: String,
    pub dataset: String,
    #[serde(default)]
    pub subject: Option<String>,
    pub question: String,
    #[serde(default)]
    pub options: Vec<Choice>,
    /// Empty for generation tasks.
    #[serde(default)]
    pub answer_key: String,
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default)]
    pub shots: Vec<BenchmarkInstance>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Re-key `texts` as A, B, C...
pub fn keyed(texts: &[String]) -> Result<Vec<Choice>> {
    if texts.len() > OPTION_KEYS.len() {
        return Err(BenchError::Invalid(format!("{} options; at most 10 are supported", texts.len())));
    }
    Ok(texts
        .iter()
        .zip(OPTION_KEYS)
        .map(|(t, k)| Choice {
            key: k.to_string(),
            text: t.clone(),
        })
        .collect())
}

impl BenchmarkInstance {
    pub fn is_generation(&self) -> bool {
        self.options.is_empty()
    }

    pub fn option_keys(&self) -> Vec<&str> {
        self.options.iter().map(|c| c.key.as_str()).collect()
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.options
            .iter()
            .find(|c| c.key == self.answer_key)
            .map(|c| c.text.as_str())
    }

    /// Structural checks; image references are checked separately since they
    /// depend on where the benchmark lives.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Invalid(format!("instance {}: {m}", self.id)));
        if self.id.is_empty() {
            return bad("empty id".into());
        }
        if self.options.len() > OPTION_KEYS.len() {
            return bad(format!("{} options", self.options.len()));
        }
        for (c, k) in self.options.iter().zip(OPTION_KEYS) {
            if c.key != k {
                return bad(format!("option keys must run A, B, C...; found {} at {k}", c.key));
            }
        }
        if self.is_generation() {
            if !self.answer_key.is_empty() {
                return bad("answer key on a generation task".into());
            }
        } else if self.answer_text().is_none() {
            return bad(format!("answer key `{}` is not an option", self.answer_key));
        }
        for shot in &self.shots {
            if shot.id == self.id {
                return bad("instance is its own exemplar".into());
            }
            shot.validate()?;
        }
        Ok(())
    }

    /// Every image path, relative to `root`, must exist.
    pub fn check_images(&self, root: &Path) -> Result<()> {
        for img in self.images.iter().chain(self.shots.iter().flat_map(|s| &s.images)) {
            if !root.join(img).is_file() {
                return Err(BenchError::Invalid(format!("instance {}: image {img} not found", self.id)));
            }
        }
        Ok(())
    }
}

/// Validate every instance and reject duplicate ids.
pub fn validate_benchmark(instances: &[BenchmarkInstance]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for inst in instances {
        inst.validate()?;
        if !seen.insert(inst.id.as_str()) {
            return Err(BenchError::Invalid(format!("duplicate instance id {}", inst.id)));
        }
    }
    Ok(())
}

/// Write `bytes` next to `path` and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| BenchError::Io(e.error))?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    atomic_write(path, to_jsonl(records)?.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BenchError::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
