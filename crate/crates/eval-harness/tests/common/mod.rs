#![allow(dead_code)]

use std::collections::BTreeMap;

use medvlm_bench::{BenchmarkInstance, Choice};
use medvlm_eval::{EndpointConfig, Scripted};

pub const KEYS: [&str; 4] = ["A", "B", "C", "D"];

pub fn mc(id: &str, dataset: &str, subject: Option<&str>, question: &str, texts: [&str; 4], gold: usize) -> BenchmarkInstance {
    BenchmarkInstance {
        id: id.into(),
        dataset: dataset.into(),
        subject: subject.map(String::from),
        question: question.into(),
        options: KEYS
            .iter()
            .zip(texts)
            .map(|(k, t)| Choice {
                key: k.to_string(),
                text: t.into(),
            })
            .collect(),
        answer_key: KEYS[gold].into(),
        images: Vec::new(),
        shots: Vec::new(),
        meta: BTreeMap::new(),
    }
}

/// 200 four-option questions over two datasets; the gold key cycles with a
/// stride so every letter is used.
pub fn fixture() -> Vec<BenchmarkInstance> {
    (0..200)
        .map(|i| {
            let (dataset, subject) = if i % 3 == 0 {
                ("pubmedqa", None)
            } else if i % 3 == 1 {
                ("mmlu-med", Some("anatomy"))
            } else {
                ("mmlu-med", Some("virology"))
            };
            let texts = ["femur", "tibia", "fibula", "patella"];
            let question = format!("Question {i}: which bone?");
            mc(&format!("q{i:03}"), dataset, subject, &question, texts, (i * 7 + 3) % 4)
        })
        .collect()
}

/// Reply script and, alongside it, the letter each reply is meant to
/// convey (None when it conveys nothing or never arrives).
pub fn answer_sheet(bench: &[BenchmarkInstance]) -> (BTreeMap<String, Scripted>, BTreeMap<String, Option<String>>) {
    let mut sheet = BTreeMap::new();
    let mut intended = BTreeMap::new();
    for (i, inst) in bench.iter().enumerate() {
        let gold = inst.answer_key.clone();
        let g = KEYS.iter().position(|k| *k == gold).unwrap();
        let wrong = KEYS[(g + 1) % 4].to_string();
        let gold_text = inst.answer_text().unwrap().to_string();
        let (reply, meant) = match i % 10 {
            0 => (Scripted::Reply(format!("The answer is ({gold}).")), Some(gold.clone())),
            1 => (Scripted::Reply(gold.clone()), Some(gold.clone())),
            2 => (Scripted::Reply(gold_text.to_uppercase()), Some(gold.clone())),
            3 => (Scripted::Reply(format!("{wrong}.")), Some(wrong)),
            4 => (Scripted::Reply("I cannot determine this.".into()), None),
            5 => (Scripted::AlwaysFail, None),
            6 => (Scripted::FailThenReply(2, format!("Answer: {gold}")), Some(gold.clone())),
            7 => (
                Scripted::Reply(format!("Option {wrong} looks likely, but the answer is {gold}")),
                Some(gold.clone()),
            ),
            8 => (Scripted::Malformed, None),
            _ => (Scripted::Reply("A or B".into()), None),
        };
        sheet.insert(inst.id.clone(), reply);
        intended.insert(inst.id.clone(), meant);
    }
    (sheet, intended)
}

pub fn endpoint(concurrency: usize) -> EndpointConfig {
    let mut e = EndpointConfig::new("scripted");
    e.concurrency = concurrency;
    e.max_retries = 3;
    e.retry_backoff_ms = 0;
    e
}
