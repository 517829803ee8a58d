//! The evaluation loop: bounded fan-out, results committed in benchmark
//! order, resumable, one run per output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use medvlm_bench::instance::{atomic_write, parse_jsonl, to_jsonl};
use medvlm_bench::BenchmarkInstance;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::decode::{decode_once, DecodeRequest, Decoder, EndpointConfig};
use crate::error::{EvalError, Result};
use crate::extract::extract_option;
use crate::score::{render_table, score, EvalRecord, ScoreSummary};
use crate::template::{format_prompt, ChatTemplate};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const PARTIAL_FILE: &str = "results.jsonl.partial";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub id: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// SHA-256 of the benchmark, template, endpoint and model description.
    pub config_hash: String,
    pub records: usize,
    pub score: ScoreSummary,
}

pub struct EvalOptions {
    pub out_dir: PathBuf,
    pub endpoint: EndpointConfig,
    /// Continue from `results.jsonl.partial` instead of refusing to start.
    pub resume: bool,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
    /// Decodes actually requested by this call.
    pub requested: usize,
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(EvalError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn config_hash(bench: &[BenchmarkInstance], template: &ChatTemplate, endpoint: &EndpointConfig, decoder: &dyn Decoder) -> Result<String> {
    let snapshot = json!({
        "benchmark_sha256": hex::encode(Sha256::digest(to_jsonl(bench)?.as_bytes())),
        "template": template,
        "endpoint": endpoint.provenance(),
        "decoder": decoder.describe(),
    });
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&snapshot)?)))
}

fn make_record(inst: &BenchmarkInstance, output: std::result::Result<String, String>) -> EvalRecord {
    let (raw_output, failure) = match output {
        Ok(s) => (s, None),
        Err(e) => (String::new(), Some(e)),
    };
    let extracted = if inst.is_generation() || failure.is_some() {
        None
    } else {
        let opts: Vec<(&str, &str)> = inst.options.iter().map(|c| (c.key.as_str(), c.text.as_str())).collect();
        extract_option(&raw_output, &opts)
    };
    let correct = !inst.is_generation() && extracted.as_deref() == Some(inst.answer_key.as_str());
    EvalRecord {
        id: inst.id.clone(),
        dataset: inst.dataset.clone(),
        subject: inst.subject.clone(),
        raw_output,
        extracted,
        gold: inst.answer_key.clone(),
        correct,
        failure,
    }
}

fn read_done(out_dir: &Path, bench: &[BenchmarkInstance]) -> Result<(Vec<EvalRecord>, Vec<Timing>)> {
    let partial = out_dir.join(PARTIAL_FILE);
    let records: Vec<EvalRecord> = parse_jsonl(&fs::read_to_string(&partial)?, &partial.display().to_string())?;
    for (r, inst) in records.iter().zip(bench) {
        if r.id != inst.id {
            return Err(EvalError::Invalid(format!(
                "{} does not match the benchmark order ({} where {} was expected)",
                partial.display(),
                r.id,
                inst.id
            )));
        }
    }
    if records.len() > bench.len() {
        return Err(EvalError::Invalid(format!("{} has more records than the benchmark", partial.display())));
    }
    let timings_path = out_dir.join(TIMINGS_FILE);
    let mut timings: Vec<Timing> = if timings_path.exists() {
        parse_jsonl(&fs::read_to_string(&timings_path)?, &timings_path.display().to_string())?
    } else {
        Vec::new()
    };
    timings.truncate(records.len());
    Ok((records, timings))
}

/// Evaluate `bench`. Records are appended to `results.jsonl.partial` in
/// benchmark order as they become contiguous; on success the file is renamed
/// to `results.jsonl` and the summary is written.
pub fn run_eval(bench: &[BenchmarkInstance], decoder: &dyn Decoder, template: &ChatTemplate, opts: &EvalOptions) -> Result<EvalOutcome> {
    opts.endpoint.validate()?;
    medvlm_bench::instance::validate_benchmark(bench)?;
    let prompts = bench
        .iter()
        .map(|inst| format_prompt(inst, template))
        .collect::<Result<Vec<_>>>()?;
    let hash = config_hash(bench, template, &opts.endpoint, decoder)?;

    let _lock = DirLock::acquire(&opts.out_dir)?;
    let partial_path = opts.out_dir.join(PARTIAL_FILE);
    let results_path = opts.out_dir.join(RESULTS_FILE);
    let (mut records, mut timings) = if partial_path.exists() {
        if !opts.resume {
            return Err(EvalError::Invalid(format!(
                "{} holds an interrupted run; resume it or remove the file",
                partial_path.display()
            )));
        }
        read_done(&opts.out_dir, bench)?
    } else {
        if results_path.exists() && !opts.resume {
            return Err(EvalError::Invalid(format!("{} already exists", results_path.display())));
        }
        File::create(&partial_path)?;
        (Vec::new(), Vec::new())
    };
    if results_path.exists() && opts.resume && records.is_empty() {
        records = parse_jsonl(&fs::read_to_string(&results_path)?, &results_path.display().to_string())?;
        if records.len() != bench.len() || records.iter().zip(bench).any(|(r, i)| r.id != i.id) {
            return Err(EvalError::Invalid(format!("{} does not match the benchmark", results_path.display())));
        }
        fs::rename(&results_path, &partial_path)?;
    }
    // rewrite the timings sidecar to match the records kept
    atomic_write(&opts.out_dir.join(TIMINGS_FILE), to_jsonl(&timings)?.as_bytes())?;

    let start = records.len();
    let todo: Vec<usize> = (start..bench.len()).collect();
    let next = AtomicUsize::new(0);
    let mut partial = BufWriter::new(OpenOptions::new().append(true).open(&partial_path)?);
    let mut timing_file = BufWriter::new(OpenOptions::new().append(true).open(opts.out_dir.join(TIMINGS_FILE))?);
    let workers = opts.endpoint.concurrency.min(todo.len()).max(1);

    let commit = std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, todo, prompts) = (&next, &todo, &prompts);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let req = DecodeRequest {
                    instance_id: &bench[i].id,
                    messages: &prompts[i],
                    params: &opts.endpoint.decode,
                };
                let outcome = decode_once(decoder, &req, opts.endpoint.max_retries, opts.endpoint.retry_backoff_ms);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut cursor = start;
        for (i, outcome) in rx {
            pending.insert(i, outcome);
            while let Some(outcome) = pending.remove(&cursor) {
                let inst = &bench[cursor];
                let record = make_record(inst, outcome.output);
                let timing = Timing {
                    id: inst.id.clone(),
                    latency_ms: outcome.latency_ms,
                    attempts: outcome.attempts,
                };
                partial.write_all(serde_json::to_string(&record)?.as_bytes())?;
                partial.write_all(b"\n")?;
                partial.flush()?;
                timing_file.write_all(serde_json::to_string(&timing)?.as_bytes())?;
                timing_file.write_all(b"\n")?;
                timing_file.flush()?;
                records.push(record);
                timings.push(timing);
                cursor += 1;
            }
        }
        Ok(())
    });
    if let Err(e) = commit {
        // workers stop once the receiver is gone; the .partial file stays
        return Err(e);
    }
    drop(partial);
    drop(timing_file);
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if records.len() != bench.len() || ids.len() != bench.len() {
        return Err(EvalError::Invalid("run ended with missing records".into()));
    }
    fs::rename(&partial_path, &results_path)?;

    let summary = EvalSummary {
        config_hash: hash,
        records: records.len(),
        score: score(&records)?,
    };
    write_summary(&opts.out_dir, &summary)?;
    Ok(EvalOutcome {
        records,
        summary,
        requested: todo.len(),
    })
}

pub fn write_summary(dir: &Path, summary: &EvalSummary) -> Result<()> {
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    atomic_write(&dir.join(SUMMARY_JSON), json.as_bytes())?;
    let txt = format!("config {}\n{}", summary.config_hash, render_table(&summary.score));
    atomic_write(&dir.join(SUMMARY_TXT), txt.as_bytes())?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(parse_jsonl(&fs::read_to_string(path)?, &path.display().to_string())?)
}

/// Summary fields other than the score, for callers that re-score a file.
pub fn summary_value(summary: &EvalSummary) -> Value {
    serde_json::to_value(summary).expect("serializable")
}
