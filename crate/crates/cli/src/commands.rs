//! Subcommand implementations. Each returns the process exit code on
//! success; errors are classified by the caller.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medvlm_bench::instance::{read_jsonl, write_jsonl};
use medvlm_bench::patient_trial::read_qrels;
use medvlm_bench::subjects::named_allowlist;
use medvlm_bench::{
    aggregate_subjects, build_impression_bench, build_patient_trial_bench, check_overlap, shuffle_options,
    BenchmarkInstance, BuildReport, PatientNote, ReportRow, StudyImage, TrainIndex, TrialDoc,
};
use medvlm_curriculum::run::{out_dir as run_out_dir, run};
use medvlm_curriculum::train::checkpoint_path;
use medvlm_curriculum::{RunConfig, StageName};
use medvlm_eval::decode::Scripted;
use medvlm_eval::run::read_records;
use medvlm_eval::score::render_table;
use medvlm_eval::{
    run_eval, score, Decoder, EndpointConfig, EvalOptions, HttpDecoder, LocalDecoder, ScriptedDecoder, TemplateRegistry,
};
use medvlm_metrics::{score_reports, CompositeConfig, MetricKind, MetricOptions};
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{config_err, EXIT_OK, EXIT_OVERLAP};
use crate::manifest::{atomic_write, digest_dir, sha256_file, write_manifest, ManifestBuilder, RunLock, LOCK_FILE, MANIFEST_FILE};
use crate::toy_bench::build_toy_bench;

pub const API_KEY_ENV: &str = "MEDVLM_API_KEY";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

fn lock_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    file.with_file_name(name)
}

fn file_output(path: &Path) -> Result<BTreeMap<String, String>> {
    let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    Ok(BTreeMap::from([(name, sha256_file(path)?)]))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&a.config)?;
    let base_dir = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let base_dir = if base_dir.as_os_str().is_empty() { PathBuf::from(".") } else { base_dir };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(stages) = &a.stages {
        cfg.stages = stages
            .iter()
            .map(|s| s.parse::<StageName>())
            .collect::<medvlm_curriculum::Result<Vec<_>>>()?;
    }
    let out = match &a.out {
        Some(o) => std::path::absolute(o)?,
        None => run_out_dir(&cfg, &base_dir),
    };
    cfg.out_dir = out.clone();
    cfg.validate()?;
    let stages = cfg.resolve_stages()?;

    // the output location is not a parameter of the run
    let mut portable = cfg.clone();
    portable.out_dir = PathBuf::from(".");
    let effective = portable.canonical_toml();
    let mut manifest = ManifestBuilder::new("train", &json!({ "config": effective }), Some(cfg.seed));
    manifest.input("config", &a.config)?;
    for (id, spec) in &cfg.datasets {
        if let Some(p) = &spec.path {
            manifest.input(&format!("dataset:{id}"), &base_dir.join(p))?;
        }
    }

    let _lock = RunLock::acquire(out.join(LOCK_FILE))?;
    let resume_from = if a.resume {
        let done = stages
            .iter()
            .enumerate()
            .take_while(|(i, s)| checkpoint_path(&out, *i, s.name).exists())
            .count();
        if done > 0 {
            log::info!("resuming after {done} completed stage(s)");
        }
        Some(done)
    } else {
        if out.join(MANIFEST_FILE).exists() {
            bail!("{} holds a finished run; use --resume or another --out", out.display());
        }
        None
    };
    if resume_from != Some(stages.len()) || stages.is_empty() {
        let outcome = run(&cfg, &base_dir, resume_from.filter(|&k| k > 0))?;
        for stage in &stages {
            if let Some((start, end)) = outcome.log.smoothed_start_end(stage.name) {
                println!("{:<9} loss {:.4} -> {:.4}", stage.name.as_str(), start, end);
            }
        }
    } else {
        println!("all {} stages already complete", stages.len());
    }
    atomic_write(&out.join(EFFECTIVE_CONFIG), effective.as_bytes())?;
    write_manifest(&out.join(MANIFEST_FILE), &manifest.finish(digest_dir(&out)?))?;
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, task: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| config_err(format!("--task {task} needs {flag}")))
}

pub fn build_bench(a: &BuildBenchArgs) -> Result<u8> {
    if a.shots > 1 {
        return Err(config_err("--shots must be 0 or 1"));
    }
    let _lock = RunLock::acquire(a.out.join(LOCK_FILE))?;
    let task = a.task.as_str();
    let mut effective = json!({"task": task, "seed": a.seed, "shots": a.shots});
    let mut manifest_inputs: Vec<(&str, &Path)> = Vec::new();
    let (instances, report): (Vec<BenchmarkInstance>, BuildReport) = match a.task {
        BenchTask::Subjects => {
            let input = require(&a.input, "--input", task)?;
            let subjects = require(&a.subjects, "--subjects", task)?;
            let allow: Vec<String> = match named_allowlist(subjects) {
                Some(list) => list.iter().map(|s| s.to_string()).collect(),
                None => subjects.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            };
            effective["subjects"] = json!(allow);
            manifest_inputs.push(("input", input));
            let records: Vec<BenchmarkInstance> = read_jsonl(input)?;
            let inputs = records.len();
            let mut kept = aggregate_subjects(records, &allow);
            for inst in kept.iter_mut().filter(|i| !i.is_generation()) {
                let (options, key) = shuffle_options(&inst.options, &inst.answer_key, &inst.id, a.seed)?;
                inst.options = options;
                inst.answer_key = key;
            }
            if a.shots > 0 {
                medvlm_bench::shots::attach_shots(&mut kept, a.shots, a.seed)?;
            }
            let report = BuildReport {
                task: task.into(),
                seed: a.seed,
                inputs,
                instances: kept.len(),
                skipped: Vec::new(),
            };
            (kept, report)
        }
        BenchTask::PatientTrial => {
            let notes_path = require(&a.notes, "--notes", task)?;
            let trials_path = require(&a.trials, "--trials", task)?;
            let qrels_path = require(&a.qrels, "--qrels", task)?;
            manifest_inputs.extend([("notes", notes_path.as_path()), ("trials", trials_path), ("qrels", qrels_path)]);
            let notes: Vec<PatientNote> = read_jsonl(notes_path)?;
            let trials: Vec<TrialDoc> = read_jsonl(trials_path)?;
            let qrels = read_qrels(qrels_path)?;
            build_patient_trial_bench(&notes, &trials, &qrels, a.shots, a.seed)?
        }
        BenchTask::Impression => {
            let studies_path = require(&a.studies, "--studies", task)?;
            let reports_path = require(&a.reports, "--reports", task)?;
            let root = require(&a.image_root, "--image-root", task)?;
            manifest_inputs.extend([("studies", studies_path.as_path()), ("reports", reports_path)]);
            let studies: Vec<StudyImage> = medvlm_bench::impression::read_csv(studies_path)?;
            let reports: Vec<ReportRow> = medvlm_bench::impression::read_csv(reports_path)?;
            build_impression_bench(&studies, &reports, root, a.shots, a.seed)?
        }
        BenchTask::Toy => {
            let size = *require(&a.size, "--size", task)?;
            effective["size"] = json!(size);
            let instances = build_toy_bench(size, a.seed, &a.out)?;
            let report = BuildReport {
                task: task.into(),
                seed: a.seed,
                inputs: size,
                instances: instances.len(),
                skipped: Vec::new(),
            };
            (instances, report)
        }
    };
    let mut manifest = ManifestBuilder::new("build-bench", &effective, Some(a.seed));
    for (role, path) in manifest_inputs {
        manifest.input(role, path)?;
    }
    write_jsonl(&a.out.join(BENCH_FILE), &instances)?;
    write_json(&a.out.join(REPORT_FILE), &report)?;
    write_manifest(&a.out.join(MANIFEST_FILE), &manifest.finish(digest_dir(&a.out)?))?;
    println!("{} instances, {} skipped -> {}", instances.len(), report.skipped.len(), a.out.join(BENCH_FILE).display());
    Ok(EXIT_OK)
}

pub const BENCH_FILE: &str = "bench.jsonl";
pub const REPORT_FILE: &str = "build_report.json";

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let mut registry = TemplateRegistry::builtin();
    if let Some(t) = &a.templates {
        registry.load_toml(t)?;
    }
    let template = registry.get(&a.template)?.clone();
    let bench: Vec<BenchmarkInstance> = read_jsonl(&a.bench)?;
    let image_root = match &a.image_root {
        Some(r) => r.clone(),
        None => a.bench.parent().map(Path::to_path_buf).unwrap_or_default(),
    };

    let mut manifest_inputs: Vec<(&str, PathBuf)> = vec![("bench", a.bench.clone())];
    let mut endpoint = EndpointConfig::new(a.endpoint.clone());
    endpoint.model = a.model.clone().unwrap_or_default();
    endpoint.timeout_secs = a.timeout_secs;
    endpoint.max_retries = a.max_retries;
    endpoint.concurrency = a.concurrency;
    endpoint.retry_backoff_ms = a.retry_backoff_ms;
    endpoint.decode.max_new_tokens = a.max_new_tokens;
    endpoint.decode.stop = a.stop.clone();
    let decoder: Box<dyn Decoder> = if let Some(ckpt) = a.endpoint.strip_prefix("local:") {
        // the checkpoint is identified by its weights, not its location
        endpoint.base_url = "local".into();
        manifest_inputs.push(("checkpoint", PathBuf::from(ckpt)));
        Box::new(LocalDecoder::from_checkpoint(Path::new(ckpt), &image_root)?)
    } else if let Some(sheet) = a.endpoint.strip_prefix("scripted:") {
        endpoint.base_url = "scripted".into();
        manifest_inputs.push(("script", PathBuf::from(sheet)));
        let text = fs::read_to_string(sheet).with_context(|| format!("reading {sheet}"))?;
        let sheet: BTreeMap<String, Scripted> =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{sheet}: {e}")))?;
        Box::new(ScriptedDecoder::new(sheet))
    } else if a.endpoint.starts_with("http://") || a.endpoint.starts_with("https://") {
        Box::new(HttpDecoder::new(endpoint.clone(), &image_root)?.with_api_key(std::env::var(API_KEY_ENV).ok()))
    } else {
        return Err(config_err(format!(
            "--endpoint {}: expected an http(s) URL, local:CHECKPOINT or scripted:SHEET",
            a.endpoint
        )));
    };
    endpoint.validate()?;

    let effective = json!({
        "template": template,
        "endpoint": endpoint.provenance(),
        "decoder": decoder.describe(),
    });
    let mut manifest = ManifestBuilder::new("eval", &effective, None);
    for (role, path) in &manifest_inputs {
        manifest.input(role, path)?;
    }
    let _lock = RunLock::acquire(a.out.join(LOCK_FILE))?;
    let outcome = run_eval(
        &bench,
        decoder.as_ref(),
        &template,
        &EvalOptions {
            out_dir: a.out.clone(),
            endpoint,
            resume: a.resume,
        },
    )?;
    write_manifest(&a.out.join(MANIFEST_FILE), &manifest.finish(digest_dir(&a.out)?))?;
    print!("{}", render_table(&outcome.summary.score));
    Ok(EXIT_OK)
}

pub fn score_cmd(a: &ScoreArgs) -> Result<u8> {
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.results.with_file_name("score.json"));
    let _lock = RunLock::acquire(lock_beside(&out))?;
    let records = read_records(&a.results)?;
    let summary = score(&records)?;
    let mut manifest = ManifestBuilder::new("score", &json!({}), None);
    manifest.input("results", &a.results)?;
    write_json(&out, &summary)?;
    write_manifest(&manifest_beside(&out), &manifest.finish(file_output(&out)?))?;
    print!("{}", render_table(&summary));
    Ok(EXIT_OK)
}

pub fn metrics(a: &MetricsArgs) -> Result<u8> {
    let metric: MetricKind = a.metric.parse().map_err(|e: medvlm_metrics::MetricError| config_err(e.to_string()))?;
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(config_err(format!("--tau {} is outside [0, 1]", a.tau)));
    }
    let opts = MetricOptions {
        tau: a.tau,
        composite: CompositeConfig {
            w0: a.w0,
            w1: a.w1,
            w2: a.w2,
        },
        ..Default::default()
    };
    let _lock = RunLock::acquire(lock_beside(&a.out))?;
    let pred = medvlm_metrics::read_reports(&a.pred)?;
    let reference = medvlm_metrics::read_reports(&a.reference)?;
    let report = score_reports(&pred, &reference, metric, &opts)?;
    let effective = json!({"metric": a.metric, "tau": a.tau, "composite": opts.composite});
    let mut manifest = ManifestBuilder::new("metrics", &effective, None);
    manifest.input("pred", &a.pred)?;
    manifest.input("ref", &a.reference)?;
    write_json(&a.out, &report)?;
    write_manifest(&manifest_beside(&a.out), &manifest.finish(file_output(&a.out)?))?;
    println!("{} ({}) over {} reports: {:.6}", a.metric, report.aggregation, report.per_report.len(), report.aggregate);
    Ok(EXIT_OK)
}

/// Index the text fields and image files of a line-delimited training file.
fn index_training_file(index: &mut TrainIndex, path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        for field in ["question", "prompt", "text"] {
            if let Some(s) = v.get(field).and_then(Value::as_str) {
                index.add_text(s);
            }
        }
        for img in v.get("images").and_then(Value::as_array).into_iter().flatten() {
            if let Some(p) = img.as_str() {
                let bytes = fs::read(base.join(p)).with_context(|| format!("{}:{}: image {p}", path.display(), i + 1))?;
                index.add_image_bytes(&bytes);
            }
        }
        n += 1;
    }
    Ok(n)
}

pub fn check_overlap_cmd(a: &OverlapArgs) -> Result<u8> {
    let _lock = RunLock::acquire(lock_beside(&a.out))?;
    let mut index = TrainIndex::default();
    let mut manifest = ManifestBuilder::new("check-overlap", &json!({}), None);
    let mut items = 0;
    for (i, t) in a.train.iter().enumerate() {
        items += index_training_file(&mut index, t)?;
        manifest.input(&format!("train:{i}"), t)?;
    }
    manifest.input("eval", &a.eval)?;
    let eval: Vec<BenchmarkInstance> = read_jsonl(&a.eval)?;
    let image_root = a.image_root.clone().or_else(|| a.eval.parent().map(Path::to_path_buf));
    let report = check_overlap(&index, &eval, image_root.as_deref())?;
    write_json(&a.out, &report)?;
    write_manifest(&manifest_beside(&a.out), &manifest.finish(file_output(&a.out)?))?;
    println!(
        "{} training items, {} evaluation instances checked, {} overlapping",
        items,
        report.checked,
        report.ids().len()
    );
    for hit in &report.hits {
        println!("  {} ({})", hit.id, hit.field);
    }
    Ok(if report.has_overlap() { EXIT_OVERLAP } else { EXIT_OK })
}
