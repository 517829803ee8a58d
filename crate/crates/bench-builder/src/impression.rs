//! Chest X-ray impression generation: studies joined with their reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::instance::BenchmarkInstance;
use crate::report::BuildReport;
use crate::shots::attach_shots;

pub const DATASET: &str = "impression";

pub const IMPRESSION_PROMPT: &str =
    "Write the Impression section of the radiology report for this chest X-ray study.";

/// One image of a study; a study may span several rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyImage {
    pub study_id: String,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub study_id: String,
    #[serde(default)]
    pub impression: String,
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

/// Inner join of `studies` and `reports` on study id, in order of first
/// appearance in `studies`. Studies with a blank or absent impression, or
/// with any image missing under `image_root`, are skipped and reported.
pub fn build_impression_bench(
    studies: &[StudyImage],
    reports: &[ReportRow],
    image_root: &Path,
    shots: usize,
    seed: u64,
) -> Result<(Vec<BenchmarkInstance>, BuildReport)> {
    let mut impressions: BTreeMap<&str, &str> = BTreeMap::new();
    for r in reports {
        if impressions.insert(&r.study_id, &r.impression).is_some() {
            return Err(BenchError::Invalid(format!("study {} has two reports", r.study_id)));
        }
    }
    let mut order: Vec<&str> = Vec::new();
    let mut images: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in studies {
        let entry = images.entry(&s.study_id).or_default();
        if entry.is_empty() {
            order.push(&s.study_id);
        }
        entry.push(&s.image);
    }
    let mut report = BuildReport {
        task: DATASET.into(),
        seed,
        inputs: order.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for id in order {
        let impression = crate::text::normalize_whitespace(impressions.get(id).copied().unwrap_or(""));
        if impression.is_empty() {
            report.skip(id, "missing impression");
            continue;
        }
        let imgs = &images[id];
        if let Some(missing) = imgs.iter().find(|p| !image_root.join(p).is_file()) {
            report.skip(id, format!("image unavailable: {missing}"));
            continue;
        }
        out.push(BenchmarkInstance {
            id: id.to_string(),
            dataset: DATASET.into(),
            subject: None,
            question: IMPRESSION_PROMPT.into(),
            options: vec![],
            answer_key: String::new(),
            images: imgs.iter().map(|s| s.to_string()).collect(),
            shots: vec![],
            meta: BTreeMap::from([("reference".into(), impression)]),
        });
    }
    attach_shots(&mut out, shots, seed)?;
    report.instances = out.len();
    Ok((out, report))
}
