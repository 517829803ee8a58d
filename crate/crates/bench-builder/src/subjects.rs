//! Subject-filtered aggregation of multiple-choice sources.

use crate::instance::BenchmarkInstance;

pub const MMLU_MED: &[&str] = &[
    "anatomy",
    "clinical_knowledge",
    "college_biology",
    "college_medicine",
    "medical_genetics",
    "nutrition",
    "professional_medicine",
];

pub const MMMU_MED: &[&str] = &[
    "basic_medical_science",
    "clinical_medicine",
    "diagnostics_and_laboratory_medicine",
    "pharmacy",
    "public_health",
];

/// Named allowlists accepted wherever a subject list is expected.
pub fn named_allowlist(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "mmlu-med" => Some(MMLU_MED),
        "mmmu-med" => Some(MMMU_MED),
        _ => None,
    }
}

/// Lowercase with spaces and hyphens as underscores, so "Clinical Medicine"
/// and "clinical_medicine" agree.
pub fn normalize_subject(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect()
}

/// Records whose subject is in `allowlist`, in input order. Records without
/// a subject never match.
pub fn aggregate_subjects<S: AsRef<str>>(records: Vec<BenchmarkInstance>, allowlist: &[S]) -> Vec<BenchmarkInstance> {
    let allowed: Vec<String> = allowlist.iter().map(|s| normalize_subject(s.as_ref())).collect();
    let out: Vec<BenchmarkInstance> = records
        .into_iter()
        .filter(|r| r.subject.as_deref().is_some_and(|s| allowed.contains(&normalize_subject(s))))
        .collect();
    if out.is_empty() {
        log::warn!("subject filter kept no records");
    }
    out
}
