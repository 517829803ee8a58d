use serde::{Deserialize, Serialize};

/// Why an input item produced no instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub item: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub task: String,
    pub seed: u64,
    pub inputs: usize,
    pub instances: usize,
    pub skipped: Vec<SkipEntry>,
}

impl BuildReport {
    pub fn skip(&mut self, item: impl Into<String>, reason: impl Into<String>) {
        self.skipped.push(SkipEntry {
            item: item.into(),
            reason: reason.into(),
        });
    }
}
