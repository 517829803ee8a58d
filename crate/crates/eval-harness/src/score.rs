//! Exact-match scoring and aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub id: String,
    pub dataset: String,
    #[serde(default)]
    pub subject: Option<String>,
    pub raw_output: String,
    pub extracted: Option<String>,
    /// Empty for generation tasks.
    pub gold: String,
    pub correct: bool,
    /// Set when no usable completion came back; such records are incorrect.
    #[serde(default)]
    pub failure: Option<String>,
}

impl EvalRecord {
    pub fn is_generation(&self) -> bool {
        self.gold.is_empty()
    }
}

/// Percentage with two decimals, rounded half up, computed in integers so
/// that identical counts always give identical values.
pub fn percent(correct: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let hundredths = (correct as u128 * 20_000 + n as u128) / (2 * n as u128);
    hundredths as f64 / 100.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += correct as usize;
        self.accuracy = percent(self.correct, self.n);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub total: Tally,
    pub null_extractions: usize,
    pub failures: usize,
    pub subjects: BTreeMap<String, Tally>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub datasets: BTreeMap<String, DatasetScore>,
    pub overall: Tally,
    /// Generation records are not scored here; see the report metrics.
    pub generation_records: usize,
}

pub fn score(records: &[EvalRecord]) -> Result<ScoreSummary> {
    let mut seen = BTreeSet::new();
    let mut out = ScoreSummary::default();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(EvalError::Invalid(format!("two records for instance {}", r.id)));
        }
        if r.is_generation() {
            out.generation_records += 1;
            continue;
        }
        let correct = r.failure.is_none() && r.extracted.as_deref() == Some(r.gold.as_str());
        if correct != r.correct {
            return Err(EvalError::Invalid(format!("record {} has an inconsistent correct flag", r.id)));
        }
        let ds = out.datasets.entry(r.dataset.clone()).or_default();
        ds.total.add(correct);
        if let Some(s) = &r.subject {
            ds.subjects.entry(s.clone()).or_default().add(correct);
        }
        if r.failure.is_some() {
            ds.failures += 1;
        } else if r.extracted.is_none() {
            ds.null_extractions += 1;
        }
        out.overall.add(correct);
    }
    Ok(out)
}

pub fn render_table(s: &ScoreSummary) -> String {
    let mut out = format!("{:<40} {:>6} {:>8} {:>9} {:>6} {:>8}\n", "dataset / subject", "n", "correct", "accuracy", "null", "failed");
    for (name, ds) in &s.datasets {
        out.push_str(&format!(
            "{:<40} {:>6} {:>8} {:>9.2} {:>6} {:>8}\n",
            name, ds.total.n, ds.total.correct, ds.total.accuracy, ds.null_extractions, ds.failures
        ));
        for (subj, t) in &ds.subjects {
            out.push_str(&format!("  {:<38} {:>6} {:>8} {:>9.2}\n", subj, t.n, t.correct, t.accuracy));
        }
    }
    out.push_str(&format!(
        "{:<40} {:>6} {:>8} {:>9.2}\n",
        "overall", s.overall.n, s.overall.correct, s.overall.accuracy
    ));
    if s.generation_records > 0 {
        out.push_str(&format!("generation records (unscored): {}\n", s.generation_records));
    }
    out
}
