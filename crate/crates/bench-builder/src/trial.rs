//! Clinical-trial documents rendered as structured prompts.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::text::clean_criteria;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDoc {
    pub trial_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub diseases: Vec<String>,
    #[serde(default)]
    pub interventions: Vec<String>,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub inclusion: String,
    #[serde(default)]
    pub exclusion: String,
}

impl TrialDoc {
    pub fn validate(&self) -> Result<()> {
        if self.trial_id.trim().is_empty() {
            return Err(BenchError::Invalid("trial with empty trial_id".into()));
        }
        Ok(())
    }
}

pub const NOT_PROVIDED: &str = "Not provided";

fn inline(label: &str, value: &str) -> String {
    let value = crate::text::normalize_whitespace(value);
    format!("{label}: {}", if value.is_empty() { NOT_PROVIDED } else { &value })
}

fn list(label: &str, items: &[String]) -> String {
    let items: Vec<String> = items
        .iter()
        .map(|s| crate::text::normalize_whitespace(s))
        .filter(|s| !s.is_empty())
        .collect();
    inline(label, &items.join("; "))
}

fn criteria(label: &str, raw: &str) -> String {
    let lines = clean_criteria(raw);
    if lines.is_empty() {
        return format!("{label}: {NOT_PROVIDED}");
    }
    let mut out = format!("{label}:");
    for l in lines {
        out.push_str("\n- ");
        out.push_str(&l);
    }
    out
}

/// Title, Diseases, Interventions, Summary, Inclusion, Exclusion, one field
/// per block in that order.
pub fn build_trial_prompt(trial: &TrialDoc) -> String {
    [
        inline("Title", &trial.title),
        list("Diseases", &trial.diseases),
        list("Interventions", &trial.interventions),
        inline("Summary", &trial.summary),
        criteria("Inclusion criteria", &trial.inclusion),
        criteria("Exclusion criteria", &trial.exclusion),
    ]
    .join("\n")
}
