use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use medvlm_bench::impression::{build_impression_bench, ReportRow, StudyImage};
use medvlm_bench::instance::{keyed, read_jsonl, to_jsonl, write_jsonl};
use medvlm_bench::patient_trial::{build_patient_trial_bench, read_qrels, PatientNote, ELIGIBILITY_OPTIONS};
use medvlm_bench::{shuffle_options, BenchmarkInstance, TrialDoc};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/patient_trial")
}

fn load_fixture() -> (Vec<PatientNote>, Vec<TrialDoc>, Vec<medvlm_bench::QrelRecord>) {
    let d = fixture_dir();
    (
        read_jsonl(&d.join("notes.jsonl")).unwrap(),
        read_jsonl(&d.join("trials.jsonl")).unwrap(),
        read_qrels(&d.join("qrels.txt")).unwrap(),
    )
}

#[test]
fn patient_trial_fixture() {
    let (notes, trials, qrels) = load_fixture();
    assert_eq!(qrels.len(), 20);
    let (bench, report) = build_patient_trial_bench(&notes, &trials, &qrels, 0, 17).unwrap();
    assert_eq!(bench.len(), 17);
    assert_eq!(report.skipped.len(), 3);
    let skipped: Vec<&str> = report.skipped.iter().map(|s| s.item.as_str()).collect();
    assert_eq!(skipped, ["p3__NCT04", "p5__NCT09", "p5__NCT03"]);

    // gold labels by hand from the qrels file: 2 eligible, 1 partial, 0 not
    let labels: Vec<&str> = bench.iter().map(|b| b.answer_text().unwrap()).collect();
    let e = "eligible";
    let p = "partially eligible";
    let n = "not eligible";
    assert_eq!(labels, [e, n, n, n, n, e, n, n, p, e, n, p, n, n, p, n, e]);

    // answer keys from an independent implementation of the keyed shuffle
    let keys: String = bench.iter().map(|b| b.answer_key.as_str()).collect();
    assert_eq!(keys, "BCCDADAAAABCCDDCA");

    for b in &bench {
        b.validate().unwrap();
        assert!(b.answer_text() != Some("not enough information"));
        let mut texts: Vec<&str> = b.options.iter().map(|c| c.text.as_str()).collect();
        texts.sort_unstable();
        let mut fixed = ELIGIBILITY_OPTIONS;
        fixed.sort_unstable();
        assert_eq!(texts, fixed);
    }
    let p3 = bench.iter().find(|b| b.id == "p3__NCT03").unwrap();
    assert!(p3.question.contains("[S1] Dr. Smith referred this 70 y.o. man with atrial fibrillation.\n[S2] He takes warfarin daily."));
    assert!(p3.question.contains("Inclusion criteria:\n- Nonvalvular atrial fibrillation documented\n- Age 65 or older\nExclusion criteria:\n- Active bleeding at enrollment"));
}

#[test]
fn builds_are_byte_identical() {
    let (notes, trials, qrels) = load_fixture();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        let (bench, _) = build_patient_trial_bench(&notes, &trials, &qrels, 1, 3).unwrap();
        write_jsonl(path, &bench).unwrap();
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let back: Vec<BenchmarkInstance> = read_jsonl(&a).unwrap();
    assert_eq!(to_jsonl(&back).unwrap().as_bytes(), fs::read(&a).unwrap());
    assert!(back.iter().all(|i| i.shots.len() == 1 && i.shots[0].id != i.id));
    let (other_seed, _) = build_patient_trial_bench(&notes, &trials, &qrels, 0, 4).unwrap();
    assert_ne!(to_jsonl(&other_seed).unwrap().as_bytes(), fs::read(&a).unwrap());
}

#[test]
fn shuffle_is_order_independent() {
    let opts = keyed(&ELIGIBILITY_OPTIONS.map(String::from)).unwrap();
    let first = shuffle_options(&opts, "B", "p1__NCT01", 9).unwrap();
    for other in ["p2__NCT02", "x", "y"] {
        shuffle_options(&opts, "A", other, 9).unwrap();
    }
    assert_eq!(shuffle_options(&opts, "B", "p1__NCT01", 9).unwrap(), first);
}

#[test]
fn impression_exemplars_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut studies = Vec::new();
    let mut reports = Vec::new();
    for i in 1..=6 {
        let img = format!("s{i}.ppm");
        fs::write(dir.path().join(&img), b"P6\n1 1\n255\n\x01\x02\x03").unwrap();
        studies.push(StudyImage {
            study_id: format!("s{i}"),
            image: img,
        });
        reports.push(ReportRow {
            study_id: format!("s{i}"),
            impression: format!("Finding {i}."),
        });
    }
    let (bench, _) = build_impression_bench(&studies, &reports, dir.path(), 1, 7).unwrap();
    let exemplars: Vec<&str> = bench.iter().map(|b| b.shots[0].id.as_str()).collect();
    assert_eq!(exemplars, ["s5", "s4", "s4", "s1", "s6", "s4"]);
    let meta: BTreeMap<String, String> = bench[0].shots[0].meta.clone();
    assert_eq!(meta["reference"], "Finding 5.");
}
