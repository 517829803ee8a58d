//! Patient-trial eligibility as four-option multiple choice.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::instance::{keyed, BenchmarkInstance};
use crate::report::BuildReport;
use crate::shots::attach_shots;
use crate::shuffle::shuffle_options;
use crate::text::{render_segments, segment_sentences};
use crate::trial::{build_trial_prompt, TrialDoc};

pub const DATASET: &str = "patient-trial";

/// Fixed answer set before shuffling. "not enough information" is never the
/// gold label.
pub const ELIGIBILITY_OPTIONS: [&str; 4] = ["eligible", "partially eligible", "not eligible", "not enough information"];

pub const ELIGIBILITY_QUERY: &str =
    "Based on the patient note and the trial description, which option best describes the patient's eligibility for this trial?";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientNote {
    pub patient_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelRecord {
    pub patient_id: String,
    pub trial_id: String,
    pub grade: i64,
}

pub fn map_qrel_to_label(grade: i64) -> Result<&'static str> {
    match grade {
        2 => Ok("eligible"),
        1 => Ok("partially eligible"),
        0 => Ok("not eligible"),
        g => Err(BenchError::Invalid(format!("relevance grade {g} outside 0, 1, 2"))),
    }
}

/// Delimited qrels: `patient trial grade` or `patient iteration trial grade`,
/// separated by tabs, commas or spaces. Blank lines, `#` comments and a
/// header row whose last column is not a number are skipped.
pub fn parse_qrels(text: &str, origin: &str) -> Result<Vec<QrelRecord>> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let header_allowed = std::mem::replace(&mut first, false);
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let err = |msg: String| BenchError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let (patient, trial, grade) = match fields.as_slice() {
            [p, t, g] | [p, _, t, g] => (*p, *t, *g),
            _ => return Err(err(format!("expected 3 or 4 columns, found {}", fields.len()))),
        };
        let grade = match grade.parse::<i64>() {
            Ok(g) => g,
            Err(_) if header_allowed && grade.chars().any(char::is_alphabetic) => continue,
            Err(_) => return Err(err(format!("grade `{grade}` is not an integer"))),
        };
        out.push(QrelRecord {
            patient_id: patient.to_string(),
            trial_id: trial.to_string(),
            grade,
        });
    }
    Ok(out)
}

pub fn read_qrels(path: &Path) -> Result<Vec<QrelRecord>> {
    parse_qrels(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn instance_id(patient_id: &str, trial_id: &str) -> String {
    format!("{patient_id}__{trial_id}")
}

fn index_unique<'a, T>(items: &'a [T], key: impl Fn(&T) -> &str, what: &str) -> Result<BTreeMap<&'a str, &'a T>> {
    let mut map = BTreeMap::new();
    for it in items {
        let k = key(it);
        if map.insert(k, it).is_some() {
            return Err(BenchError::Invalid(format!("duplicate {what} id {k}")));
        }
    }
    Ok(map)
}

/// One instance per valid judged pair, in qrel order. Invalid grades,
/// references to unknown patients or trials and repeated pairs are skipped
/// and listed in the report.
pub fn build_patient_trial_bench(
    notes: &[PatientNote],
    trials: &[TrialDoc],
    qrels: &[QrelRecord],
    shots: usize,
    seed: u64,
) -> Result<(Vec<BenchmarkInstance>, BuildReport)> {
    for t in trials {
        t.validate()?;
    }
    let notes = index_unique(notes, |n| &n.patient_id, "patient")?;
    let trials = index_unique(trials, |t| &t.trial_id, "trial")?;
    let mut report = BuildReport {
        task: DATASET.into(),
        seed,
        inputs: qrels.len(),
        ..Default::default()
    };
    let options = keyed(&ELIGIBILITY_OPTIONS.map(String::from))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for q in qrels {
        let id = instance_id(&q.patient_id, &q.trial_id);
        let label = match map_qrel_to_label(q.grade) {
            Ok(l) => l,
            Err(e) => {
                report.skip(&id, e.to_string());
                continue;
            }
        };
        let (Some(note), Some(trial)) = (notes.get(q.patient_id.as_str()), trials.get(q.trial_id.as_str())) else {
            let missing = if notes.contains_key(q.patient_id.as_str()) {
                format!("unknown trial {}", q.trial_id)
            } else {
                format!("unknown patient {}", q.patient_id)
            };
            report.skip(&id, missing);
            continue;
        };
        if !seen.insert(id.clone()) {
            report.skip(&id, "repeated judgment for this pair");
            continue;
        }
        let gold = options.iter().find(|c| c.text == label).expect("label is an option");
        let (shuffled, answer_key) = shuffle_options(&options, &gold.key, &id, seed)?;
        let question = format!(
            "Patient note:\n{}\n\nClinical trial:\n{}\n\n{ELIGIBILITY_QUERY}",
            render_segments(&segment_sentences(&note.text)),
            build_trial_prompt(trial)
        );
        out.push(BenchmarkInstance {
            id,
            dataset: DATASET.into(),
            subject: None,
            question,
            options: shuffled,
            answer_key,
            images: vec![],
            shots: vec![],
            meta: BTreeMap::from([
                ("patient_id".into(), q.patient_id.clone()),
                ("trial_id".into(), q.trial_id.clone()),
                ("grade".into(), q.grade.to_string()),
                ("label".into(), label.into()),
            ]),
        });
    }
    attach_shots(&mut out, shots, seed)?;
    report.instances = out.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrel_mapping() {
        assert_eq!(map_qrel_to_label(2).unwrap(), "eligible");
        assert_eq!(map_qrel_to_label(1).unwrap(), "partially eligible");
        assert_eq!(map_qrel_to_label(0).unwrap(), "not eligible");
        assert!(map_qrel_to_label(3).is_err());
        assert!(map_qrel_to_label(-1).is_err());
    }

    #[test]
    fn qrel_formats() {
        let text = "patient\titer\ttrial\tgrade\np1\t0\tNCT1\t2\n\n# c\np2 NCT2 1\np3,NCT3,0\n";
        let q = parse_qrels(text, "q").unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!((q[0].patient_id.as_str(), q[0].trial_id.as_str(), q[0].grade), ("p1", "NCT1", 2));
        assert_eq!(q[2].grade, 0);
        assert!(parse_qrels("p1 t1 x\np2 t2 zz\n", "q").is_err());
        assert!(parse_qrels("p1 t1\n", "q").is_err());
    }

    fn fixture() -> (Vec<PatientNote>, Vec<TrialDoc>) {
        let notes = vec![
            PatientNote {
                patient_id: "p1".into(),
                text: "Male, 45. Smoker.".into(),
            },
            PatientNote {
                patient_id: "p2".into(),
                text: "Female, 60 with type 2 diabetes.".into(),
            },
        ];
        let trials = vec![TrialDoc {
            trial_id: "t1".into(),
            title: "A trial".into(),
            inclusion: "- adults aged 40 or older".into(),
            ..Default::default()
        }];
        (notes, trials)
    }

    #[test]
    fn three_judged_pairs() {
        let (notes, trials) = fixture();
        let q = |p: &str, g| QrelRecord {
            patient_id: p.into(),
            trial_id: "t1".into(),
            grade: g,
        };
        let (bench, report) = build_patient_trial_bench(&notes, &trials, &[q("p1", 2), q("p2", 0)], 0, 5).unwrap();
        assert_eq!(bench.len(), 2);
        assert!(report.skipped.is_empty());
        assert_eq!(bench[0].answer_text(), Some("eligible"));
        assert_eq!(bench[1].answer_text(), Some("not eligible"));
        assert!(bench[0].question.starts_with("Patient note:\n[S1] Male, 45.\n[S2] Smoker.\n\nClinical trial:\nTitle: A trial\n"));
        let mut texts: Vec<_> = bench[0].options.iter().map(|c| c.text.as_str()).collect();
        texts.sort();
        let mut fixed = ELIGIBILITY_OPTIONS.to_vec();
        fixed.sort();
        assert_eq!(texts, fixed);
        for b in &bench {
            b.validate().unwrap();
        }
    }

    #[test]
    fn bad_references_are_reported() {
        let (notes, trials) = fixture();
        let qrels = vec![
            QrelRecord { patient_id: "p1".into(), trial_id: "t9".into(), grade: 1 },
            QrelRecord { patient_id: "p7".into(), trial_id: "t1".into(), grade: 1 },
            QrelRecord { patient_id: "p1".into(), trial_id: "t1".into(), grade: 5 },
            QrelRecord { patient_id: "p2".into(), trial_id: "t1".into(), grade: 1 },
            QrelRecord { patient_id: "p2".into(), trial_id: "t1".into(), grade: 2 },
        ];
        let (bench, report) = build_patient_trial_bench(&notes, &trials, &qrels, 0, 0).unwrap();
        assert_eq!(bench.len(), 1);
        assert_eq!(report.skipped.len(), 4);
        assert_eq!(report.inputs - report.skipped.len(), report.instances);
        assert!(report.skipped[0].reason.contains("unknown trial t9"));
        assert!(report.skipped[1].reason.contains("unknown patient p7"));
    }
}
