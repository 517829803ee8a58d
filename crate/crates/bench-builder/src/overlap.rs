//! Exact-hash train/eval overlap detection after text normalization.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::instance::BenchmarkInstance;

/// Lowercase, drop every character that is neither alphanumeric nor
/// whitespace, collapse whitespace.
pub fn normalize_for_overlap(text: &str) -> String {
    let kept: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes of the training side.
#[derive(Clone, Debug, Default)]
pub struct TrainIndex {
    texts: HashSet<String>,
    images: HashSet<String>,
}

impl TrainIndex {
    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        let mut idx = Self::default();
        for t in texts {
            idx.add_text(t.as_ref());
        }
        idx
    }

    /// Texts that normalize to nothing are ignored.
    pub fn add_text(&mut self, text: &str) {
        let norm = normalize_for_overlap(text);
        if !norm.is_empty() {
            self.texts.insert(sha256_hex(norm.as_bytes()));
        }
    }

    pub fn add_image_bytes(&mut self, bytes: &[u8]) {
        self.images.insert(sha256_hex(bytes));
    }

    pub fn len(&self) -> usize {
        self.texts.len() + self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapHit {
    pub id: String,
    /// `question` or `image:<path>`.
    pub field: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub checked: usize,
    pub hits: Vec<OverlapHit>,
}

impl OverlapReport {
    pub fn has_overlap(&self) -> bool {
        !self.hits.is_empty()
    }

    /// Distinct ids with at least one hit, in benchmark order.
    pub fn ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for h in &self.hits {
            if out.last() != Some(&h.id.as_str()) {
                out.push(&h.id);
            }
        }
        out
    }
}

/// Report every eval instance whose question, or one of whose images (read
/// from `image_root` when given), hash-matches the training side.
pub fn check_overlap(index: &TrainIndex, eval: &[BenchmarkInstance], image_root: Option<&Path>) -> Result<OverlapReport> {
    let mut report = OverlapReport {
        checked: eval.len(),
        hits: Vec::new(),
    };
    for inst in eval {
        let norm = normalize_for_overlap(&inst.question);
        if !norm.is_empty() && index.texts.contains(&sha256_hex(norm.as_bytes())) {
            report.hits.push(OverlapHit {
                id: inst.id.clone(),
                field: "question".into(),
            });
        }
        if let Some(root) = image_root {
            for img in &inst.images {
                if index.images.contains(&sha256_hex(&fs::read(root.join(img))?)) {
                    report.hits.push(OverlapHit {
                        id: inst.id.clone(),
                        field: format!("image:{img}"),
                    });
                }
            }
        }
    }
    Ok(report)
}
