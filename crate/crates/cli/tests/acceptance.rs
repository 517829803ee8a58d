//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

#[path = "../../eval-harness/tests/common/mod.rs"]
mod eval_common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use image::{Rgb, RgbImage};
use medvlm_bench::impression::{build_impression_bench, ReportRow, StudyImage};
use medvlm_bench::instance::{keyed, read_jsonl};
use medvlm_bench::patient_trial::{build_patient_trial_bench, read_qrels, PatientNote};
use medvlm_bench::{check_overlap, shuffle_options, BenchmarkInstance, TrainIndex};
use medvlm_curriculum::data::{caption_corpus, description_corpus, instruct_corpus};
use medvlm_curriculum::train::LOG_FILE;
use medvlm_curriculum::{default_stages, run_stage, Dataset, RunConfig, StageName, TOY_CONFIG};
use medvlm_eval::run::RESULTS_FILE;
use medvlm_eval::{run_eval, EvalOptions, ScriptedDecoder, TemplateRegistry};
use medvlm_metrics::radgraph::{assignment_exact, assignment_greedy, entity_match_credit};
use medvlm_metrics::{bleu4, radgraph_partial_f1, reciprocal_mean, Entity, EntityGraph, Polarity};
use medvlm_model::{plan_tiling, Module, Prompt, Vlm, VlmConfig, VlmParams, VisionConfig};
use medvlm_nn::gradcheck::check_gradient;
use medvlm_nn::init::stream_rng;
use medvlm_nn::{yarn_scale, Graph, LrSchedule, NodeId, RopeConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- gradients

const SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-4;

fn random(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).unwrap()
}

fn check_op(name: &str, seed: u64, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[NodeId]) -> NodeId) -> Result<(), String> {
    let mut rng = stream_rng(seed, &format!("probe/{name}"));
    let shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| g.param(x.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).shape().to_vec()
    };
    let weights = random(&shape, 1.0, &mut rng);
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = build(&mut g, &ids);
        let loss = g.weighted_sum(out, weights.clone()).unwrap();
        (g, ids, loss)
    };
    let (g, ids, loss) = eval(&inputs);
    let grads = ok(g.backward(loss))?;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let report = check_gradient(
            |xk| {
                let mut xs = inputs.clone();
                xs[k] = xk.clone();
                let (g, _, loss) = eval(&xs);
                g.value(loss).data()[0]
            },
            &inputs[k],
            &analytic,
            None,
        );
        ensure!(report.passes(GRAD_TOL), "{name} seed {seed} input {k}: {report:?}");
    }
    Ok(())
}

fn op_suite(seed: u64) -> Result<(), String> {
    let r = &mut stream_rng(seed, "acceptance-ops");
    check_op("matmul", seed, vec![random(&[3, 4], 1.0, r), random(&[4, 2], 1.0, r)], |g, x| {
        g.matmul(x[0], x[1]).unwrap()
    })?;
    let lin = vec![random(&[5, 3], 1.0, r), random(&[3, 4], 1.0, r), random(&[4], 1.0, r)];
    check_op("linear", seed, lin, |g, x| g.linear(x[0], x[1], Some(x[2])).unwrap())?;
    check_op("add", seed, vec![random(&[2, 3], 1.0, r), random(&[2, 3], 1.0, r)], |g, x| {
        let s = g.add(x[0], x[1]).unwrap();
        g.scale(s, -1.7)
    })?;
    check_op("gelu", seed, vec![random(&[4, 5], 3.0, r)], |g, x| g.gelu(x[0]))?;
    let ln = vec![random(&[3, 6], 2.0, r), random(&[6], 1.0, r), random(&[6], 1.0, r)];
    check_op("layer_norm", seed, ln, |g, x| g.layer_norm(x[0], x[1], x[2]).unwrap())?;
    let positions: Vec<usize> = (0..4).map(|_| r.random_range(0..50)).collect();
    check_op("rope", seed, vec![random(&[4, 8], 1.0, r)], |g, x| {
        g.rope(x[0], &positions, &[1.0, 0.1, 0.01, 0.001]).unwrap()
    })?;
    let qkv = vec![random(&[4, 6], 1.5, r), random(&[4, 6], 1.5, r), random(&[4, 6], 1.5, r)];
    let (causal, temperature) = (seed % 2 == 0, 1.0 + seed as f64 * 0.05);
    check_op("attention", seed, qkv, |g, x| g.attention(x[0], x[1], x[2], 2, causal, temperature).unwrap())?;
    let ids: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
    check_op("embedding", seed, vec![random(&[5, 3], 1.0, r), random(&[2, 3], 1.0, r)], |g, x| {
        let e = g.embedding(x[0], &ids).unwrap();
        g.concat_rows(&[x[1], e, x[1]]).unwrap()
    })?;
    check_op("space_to_depth", seed, vec![random(&[16, 3], 1.0, r)], |g, x| g.space_to_depth(x[0], 4, 2).unwrap())?;
    let targets: Vec<Option<usize>> = (0..5).map(|i| (i != 2).then(|| r.random_range(0..7))).collect();
    check_op("cross_entropy", seed, vec![random(&[5, 7], 3.0, r)], |g, x| g.cross_entropy(x[0], &targets).unwrap())
}

fn vlm_loss_gradient(seed: u64) -> Result<usize, String> {
    let cfg = VlmConfig::tiny();
    let mut params = ok(VlmParams::init(&cfg, seed))?;
    let mut rng = stream_rng(seed, "rough");
    for (path, t) in params.iter_mut() {
        let offset = if path.ends_with(".gain") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = offset + rng.random_range(-0.5..0.5);
        }
    }
    let mut rng = stream_rng(seed, "inputs");
    let width = if seed % 2 == 0 { 16 } else { 8 };
    let img = RgbImage::from_fn(width, 8, |_, _| Rgb(rng.random()));
    let model = ok(Vlm::new(cfg.clone(), params))?;
    let prompt = Prompt {
        text: "<image>Q: ok?".into(),
        images: vec![ok(model.prepare_image(&img))?],
        completion: "yes".into(),
    };
    let plan = ok(model.plan(&prompt))?;
    let (_, grads) = ok(model.loss_and_grads(&plan, &prompt.images, &|_| true))?;
    ensure!(grads.len() == model.params().len(), "gradient map misses parameters");
    let mut probes = 0;
    for (path, value) in model.params().iter() {
        let indices: Vec<usize> = (0..4).map(|_| rng.random_range(0..value.len())).collect();
        let report = check_gradient(
            |x: &Tensor| {
                let mut p = model.params().clone();
                p.set(path, x.clone()).unwrap();
                Vlm::new(cfg.clone(), p).unwrap().loss(&plan, &prompt.images).unwrap()
            },
            value,
            &grads[path],
            Some(&indices),
        );
        ensure!(report.passes(GRAD_TOL), "vlm seed {seed} {path}: {report:?}");
        probes += indices.len();
    }
    Ok(probes)
}

fn ac1_gradients() -> Outcome {
    let started = Instant::now();
    let mut probes = 0;
    for seed in 0..SEEDS {
        op_suite(seed)?;
        probes += vlm_loss_gradient(seed)?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("10 ops and tiny-VLM loss x {SEEDS} seeds ({probes} model probes) in {secs:.1} s"))
}

// ---------------------------------------------------------------- rope

fn ac2_yarn() -> Outcome {
    let vanilla = VlmConfig::default();
    let mut yarn = vanilla.clone();
    yarn.rope = RopeConfig {
        scale_factor: 1.0,
        original_context: 64,
        beta_fast: 16.0,
        beta_slow: 2.0,
        ..vanilla.rope.clone()
    };
    let params = ok(VlmParams::init(&vanilla, 3))?;
    let a = ok(Vlm::new(vanilla, params.clone()))?;
    let b = ok(Vlm::new(yarn, params))?;
    let img = RgbImage::from_fn(48, 32, |x, y| Rgb([(x * 5) as u8, (y * 7) as u8, 120]));
    let prompt = Prompt {
        text: "<image>Describe:".into(),
        images: vec![ok(a.prepare_image(&img))?],
        completion: String::new(),
    };
    let plan = ok(a.plan(&prompt))?;
    ensure!(
        ok(a.forward(&plan, &prompt.images))?.bitwise_eq(&ok(b.forward(&plan, &prompt.images))?),
        "s=1 logits differ from vanilla RoPE"
    );

    let long = RopeConfig::long_context(128);
    ok(long.validate())?;
    ensure!(long.theta_base == 150_000.0, "theta {}", long.theta_base);
    ensure!(long.extended_context() == 131_072, "extended context {}", long.extended_context());
    let (_, t) = ok(yarn_scale(&long))?;
    let expected = 0.1 * 32f64.ln() + 1.0;
    ensure!((t - expected).abs() < 1e-9, "temperature {t} vs {expected}");
    Ok(format!("bitwise identity at s=1; temperature(32) = {t:.12}; 4096 -> 131072 validates"))
}

// ---------------------------------------------------------------- tiling

fn tiling_oracle(width: u32, height: u32, cfg: &VisionConfig) -> (usize, usize) {
    let target = (width as f64 * height as f64 / (cfg.tile_size * cfg.tile_size) as f64).ceil();
    let image_aspect = width as f64 / height as f64;
    let grids: Vec<(usize, usize)> = (1..=cfg.max_tiles)
        .flat_map(|r| (1..=cfg.max_tiles).map(move |c| (r, c)))
        .filter(|(r, c)| r * c <= cfg.max_tiles)
        .collect();
    let aspect = |&(r, c): &(usize, usize)| ((c as f64 / r as f64) / image_aspect).ln().abs();
    let best = grids.iter().map(aspect).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<_> = grids.into_iter().filter(|g| aspect(g) - best < 1e-12).collect();
    tied.sort_by(|a, b| {
        let da = ((a.0 * a.1) as f64 - target).abs();
        let db = ((b.0 * b.1) as f64 - target).abs();
        da.partial_cmp(&db).unwrap().then((a.0 * a.1).cmp(&(b.0 * b.1))).then(a.0.cmp(&b.0))
    });
    tied[0]
}

fn ac3_tiling() -> Outcome {
    let started = Instant::now();
    let cfg = VisionConfig::production();
    ensure!(
        (cfg.tile_size, cfg.patch_size, cfg.downsample_ratio, cfg.max_tiles) == (336, 14, 0.5, 12),
        "production vision config {cfg:?}"
    );
    ensure!(cfg.tokens_per_tile() == 144, "tokens per tile {}", cfg.tokens_per_tile());
    let mut rng = stream_rng(1, "acceptance-tiling");
    for i in 0..1000 {
        let (w, h) = if i % 4 == 0 {
            (rng.random_range(1..=12u32) * 336, rng.random_range(1..=12u32) * 336)
        } else {
            (rng.random_range(1..=5000), rng.random_range(1..=5000))
        };
        let plan = ok(plan_tiling(w, h, &cfg))?;
        let want = tiling_oracle(w, h, &cfg);
        ensure!((plan.grid_rows, plan.grid_cols) == want, "{w}x{h}: {:?} vs {want:?}", (plan.grid_rows, plan.grid_cols));
        ensure!(plan.tile_count() <= 12, "{w}x{h}: {} tiles", plan.tile_count());
    }
    ensure!(ok(plan_tiling(336 * 40, 336, &cfg))?.tile_count() == 12, "cap not reached on a 40:1 strip");
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("1000 sizes match enumeration; 144 tokens/tile, 12-tile cap; {secs:.2} s"))
}

// ---------------------------------------------------------------- curriculum

fn ac4_freeze_and_rates() -> Outcome {
    let mut model = ok(Vlm::init(VlmConfig::default(), 0))?;
    let snapshot = |m: &Vlm, module| -> Vec<(String, Tensor)> {
        m.params()
            .module_paths(module)
            .into_iter()
            .map(|p| {
                let t = m.params().get(&p).unwrap().clone();
                (p, t)
            })
            .collect()
    };
    let lm = snapshot(&model, Module::Lm);
    let [s0, ..] = default_stages();
    ok(run_stage(&mut model, &s0, 0, &caption_corpus("pretrain", 50, 0), 0))?;
    ensure!(
        lm.iter().all(|(p, t)| model.params().get(p).unwrap().bitwise_eq(t)),
        "stage 0 moved a language-model tensor"
    );

    let data: [Dataset; 3] = [
        caption_corpus("pretrain", 20, 0),
        description_corpus("midtrain", 20, 0),
        instruct_corpus("instruct", 20, 0),
    ];
    let expected = [
        BTreeMap::from([(Module::Projector, 1e-3)]),
        BTreeMap::from([(Module::Projector, 2e-5), (Module::Lm, 2e-5)]),
        BTreeMap::from([(Module::Vision, 8e-5), (Module::Projector, 8e-5), (Module::Lm, 8e-5)]),
    ];
    let mut model = ok(Vlm::init(VlmConfig::default(), 0))?;
    for (i, (mut stage, ds)) in default_stages().into_iter().zip(&data).enumerate() {
        stage.batch_size = 1;
        let warmup = ok(LrSchedule::new(1.0, stage.total_steps(ds.len()), stage.warmup_ratio))?.warmup_steps();
        let out = ok(run_stage(&mut model, &stage, i, ds, 0))?;
        let rec = out.log.steps.iter().find(|r| r.step == warmup).ok_or("no record at warmup end")?;
        ensure!(rec.lr == expected[i], "{}: logged {:?}", stage.name, rec.lr);
    }
    Ok(format!("{} LM tensors bitwise unchanged; warmup-end rates 1e-3 / 2e-5 / 8e-5", lm.len()))
}

fn ac5_toy_training() -> Outcome {
    let cfg = ok(RunConfig::parse(TOY_CONFIG))?;
    let dirs = [ok(tempfile::tempdir())?, ok(tempfile::tempdir())?];
    let mut ratios = Vec::new();
    let mut secs = Vec::new();
    for dir in &dirs {
        let started = Instant::now();
        let out = ok(medvlm_curriculum::run::run(&cfg, dir.path(), None))?;
        secs.push(started.elapsed().as_secs_f64());
        ratios.clear();
        for stage in [StageName::Pretrain, StageName::Midtrain, StageName::Instruct] {
            let (start, end) = out.log.smoothed_start_end(stage).ok_or("stage missing from log")?;
            ratios.push(end / start);
            ensure!(end <= 0.7 * start, "{stage}: smoothed loss {start:.4} -> {end:.4}");
        }
    }
    ensure!(secs.iter().all(|&s| s < 600.0), "run times {secs:?}");
    let a = dirs[0].path().join(&cfg.out_dir);
    let b = dirs[1].path().join(&cfg.out_dir);
    let files = artifact_files(&a)?;
    ensure!(files.iter().any(|f| f.ends_with(".ckpt")), "no checkpoints written");
    ensure!(files.iter().any(|f| f == LOG_FILE), "no training log written");
    ensure!(files == artifact_files(&b)?, "runs wrote different file sets");
    for rel in &files {
        ensure!(ok(fs::read(a.join(rel)))? == ok(fs::read(b.join(rel)))?, "{rel} differs between runs");
    }
    Ok(format!(
        "loss ratios {:.2} / {:.2} / {:.2}; {} artifacts identical; runs {:.0} s and {:.0} s",
        ratios[0], ratios[1], ratios[2], files.len(), secs[0], secs[1]
    ))
}

// ---------------------------------------------------------------- harness

fn ac6_harness() -> Outcome {
    let bench = eval_common::fixture();
    let (sheet, intended) = eval_common::answer_sheet(&bench);
    let registry = TemplateRegistry::builtin();
    let template = ok(registry.get("medvlm-chat"))?;
    let oracle = bench
        .iter()
        .filter(|i| intended[&i.id].as_deref() == Some(i.answer_key.as_str()))
        .count();
    let mut files = Vec::new();
    let tmp = ok(tempfile::tempdir())?;
    for c in [1, 8] {
        let dir = tmp.path().join(format!("c{c}"));
        let opts = EvalOptions {
            out_dir: dir.clone(),
            endpoint: eval_common::endpoint(c),
            resume: false,
        };
        let out = ok(run_eval(&bench, &ScriptedDecoder::new(sheet.clone()), template, &opts))?;
        let s = &out.summary.score;
        ensure!(s.overall.n == 200 && s.overall.correct == oracle, "concurrency {c}: {}/{}", s.overall.correct, s.overall.n);
        let nulls: usize = s.datasets.values().map(|d| d.null_extractions).sum();
        let failures: usize = s.datasets.values().map(|d| d.failures).sum();
        ensure!((nulls, failures) == (40, 40), "nulls {nulls}, failures {failures}");
        ensure!(
            out.records.iter().all(|r| !(r.correct && (r.extracted.is_none() || r.failure.is_some()))),
            "a null or failed record was scored correct"
        );
        files.push(ok(fs::read(dir.join(RESULTS_FILE)))?);
    }
    ensure!(files[0] == files[1], "results differ between concurrency 1 and 8");
    Ok(format!("{oracle}/200 correct as hand-computed (40 null, 40 transport failures); c=1 and c=8 identical"))
}

// ---------------------------------------------------------------- builders

fn ac7_builders() -> Outcome {
    let d = Path::new(env!("CARGO_MANIFEST_DIR")).join("../bench-builder/tests/fixtures/patient_trial");
    let notes: Vec<PatientNote> = ok(read_jsonl(&d.join("notes.jsonl")))?;
    let trials = ok(read_jsonl(&d.join("trials.jsonl")))?;
    let qrels = ok(read_qrels(&d.join("qrels.txt")))?;
    ensure!(qrels.len() == 20, "{} qrels", qrels.len());
    let (bench, report) = ok(build_patient_trial_bench(&notes, &trials, &qrels, 0, 17))?;
    ensure!(bench.len() == 17 && report.skipped.len() == 3, "{} instances, {} skipped", bench.len(), report.skipped.len());

    let (e, p, n) = ("eligible", "partially eligible", "not eligible");
    let labels: Vec<&str> = bench.iter().map(|b| b.answer_text().unwrap_or("")).collect();
    ensure!(labels == [e, n, n, n, n, e, n, n, p, e, n, p, n, n, p, n, e], "labels {labels:?}");

    // keys and permutation from an independent implementation
    let keys: String = bench.iter().map(|b| b.answer_key.as_str()).collect();
    ensure!(keys == "BCCDADAAAABCCDDCA", "answer keys {keys}");
    let four = ok(keyed(&["w", "x", "y", "z"].map(String::from)))?;
    let (opts, _) = ok(shuffle_options(&four, "A", "x1", 17))?;
    let order: Vec<&str> = opts.iter().map(|c| c.text.as_str()).collect();
    ensure!(order == ["w", "y", "x", "z"], "permutation {order:?}");

    let tmp = ok(tempfile::tempdir())?;
    let mut studies = Vec::new();
    let mut reports = Vec::new();
    for i in 0..40 {
        let img = format!("s{i}.ppm");
        ok(fs::write(tmp.path().join(&img), [b"P6\n1 1\n255\n".as_slice(), &[i as u8, 2, 3]].concat()))?;
        studies.push(StudyImage { study_id: format!("s{i}"), image: img });
        reports.push(ReportRow { study_id: format!("s{i}"), impression: format!("Finding {i}.") });
    }
    for seed in 0..25 {
        let (imp, _) = ok(build_impression_bench(&studies, &reports, tmp.path(), 1, seed))?;
        ensure!(imp.len() == 40, "{} impression instances", imp.len());
        for b in &imp {
            ensure!(b.shots.len() == 1 && b.shots[0].id != b.id, "seed {seed}: {} uses itself", b.id);
        }
    }
    Ok("17 instances + 3 skipped; 2/1/0 labels and golden keys match; no self-exemplar over 25 seeds".into())
}

// ---------------------------------------------------------------- overlap

fn question(id: String, question: String) -> BenchmarkInstance {
    BenchmarkInstance {
        id,
        dataset: "eval".into(),
        subject: None,
        question,
        options: vec![],
        answer_key: String::new(),
        images: vec![],
        shots: vec![],
        meta: BTreeMap::new(),
    }
}

fn ac8_overlap() -> Outcome {
    let started = Instant::now();
    let sentence = |prefix: &str, i: usize| format!("{prefix} item {i}: which sign best fits patient {}?", i * 7919 % 10007);
    let train: Vec<String> = (0..10_000).map(|i| sentence("Train", i)).collect();
    let index = TrainIndex::from_texts(&train);
    let mut eval: Vec<_> = (0..10_000).map(|i| question(format!("e{i}"), sentence("Eval", i))).collect();
    let clean = ok(check_overlap(&index, &eval, None))?;
    ensure!(clean.hits.is_empty(), "{} false positives", clean.hits.len());

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut planted = Vec::new();
    for k in 0..50 {
        let src = &train[rng.random_range(0..train.len())];
        let text = match k % 5 {
            0 => src.clone(),
            1 => src.to_uppercase(),
            2 => format!("\t{}  \n", src.replace(' ', "   ")),
            3 => src.to_lowercase().replace(' ', "\n"),
            _ => format!(" {} ", src.to_uppercase().replace(' ', " \t")),
        };
        let pos = k * 197 + 11;
        eval[pos].question = text;
        planted.push(eval[pos].id.clone());
    }
    planted.sort();
    let found = ok(check_overlap(&index, &eval, None))?;
    let mut ids: Vec<String> = found.ids().into_iter().map(String::from).collect();
    ids.sort();
    ensure!(ids == planted, "found {} of {} planted (plus extras: {})", ids.len(), planted.len(), ids.iter().any(|i| !planted.contains(i)));
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("0 false positives on 10k; 50/50 planted duplicates found; {secs:.2} s"))
}

// ---------------------------------------------------------------- metrics

fn brute_force(pred: &[Entity], reference: &[Entity]) -> f64 {
    fn go(i: usize, pred: &[Entity], reference: &[Entity], used: &mut [bool]) -> f64 {
        if i == pred.len() {
            return 0.0;
        }
        // leaving a prediction unmatched is always allowed
        let mut best = go(i + 1, pred, reference, used);
        for j in 0..reference.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(entity_match_credit(&pred[i], &reference[j]) + go(i + 1, pred, reference, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, reference, &mut vec![false; reference.len()])
}

fn ac9_metrics() -> Outcome {
    const TEXTS: [&str; 4] = ["effusion", "edema", "left lung", "heart"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let entities = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Entity> {
        (0..n)
            .map(|_| Entity {
                text: TEXTS[rng.random_range(0..4)].into(),
                label: ["observation", "anatomy"][rng.random_range(0..2)].into(),
                polarity: if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative },
            })
            .collect()
    };
    for trial in 0..10_000 {
        let (np, nr) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let pred = entities(&mut rng, np);
        let reference = entities(&mut rng, nr);
        let credit = brute_force(&pred, &reference);
        let m: Vec<Vec<f64>> = pred.iter().map(|p| reference.iter().map(|r| entity_match_credit(p, r)).collect()).collect();
        ensure!(assignment_exact(&m) == credit && assignment_greedy(&m) == credit, "trial {trial}: assignment differs");
        let want = if np + nr == 0 { 1.0 } else if credit == 0.0 { 0.0 } else {
            let (p, r) = (credit / np as f64, credit / nr as f64);
            2.0 * p * r / (p + r)
        };
        let got = radgraph_partial_f1(&EntityGraph::new(pred), &EntityGraph::new(reference));
        ensure!((got - want).abs() < 1e-12, "trial {trial}: f1 {got} vs {want}");
    }

    let e = |t: &str, p| Entity::new(t, "observation", p).unwrap();
    let flip = radgraph_partial_f1(
        &EntityGraph::new(vec![e("effusion", Polarity::Positive), e("pneumothorax", Polarity::Positive)]),
        &EntityGraph::new(vec![e("effusion", Polarity::Positive), e("pneumothorax", Polarity::Negative)]),
    );
    ensure!((flip - 0.75).abs() < 1e-6, "polarity flip {flip}");
    let bleu = bleu4("a b c d", "a b c d e");
    ensure!((bleu - (-0.25f64).exp()).abs() < 1e-6 && (bleu - 0.7788).abs() < 1e-4, "brevity {bleu}");
    let rm = ok(reciprocal_mean(&[1.0, 3.0]))?;
    ensure!((rm - 0.5).abs() < 1e-6, "reciprocal_mean {rm}");
    Ok(format!("10k trials match exhaustive assignment; flip {flip:.6}, brevity {bleu:.6}, reciprocal mean {rm:.6}"))
}

// ---------------------------------------------------------------- end to end

/// Relative paths of every non-manifest, non-timing file under `root`.
fn artifact_files(root: &Path) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in ok(fs::read_dir(&dir))? {
            let path = ok(entry)?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            let name = path.file_name().unwrap().to_string_lossy();
            if !name.ends_with("manifest.json") && name != "timings.jsonl" {
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn manifests(root: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in ok(fs::read_dir(&dir))? {
            let path = ok(entry)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.to_string_lossy().ends_with("manifest.json") {
                let v: serde_json::Value = ok(serde_json::from_slice(&ok(fs::read(&path))?))?;
                let digest = v["digest"].as_str().ok_or("manifest without digest")?.to_string();
                out.insert(path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), digest);
            }
        }
    }
    Ok(out)
}

fn medvlm(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_medvlm")).args(args).current_dir(cwd).output())?;
    ensure!(
        out.status.success(),
        "medvlm {}: {}\n{}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn pipeline(root: &Path) -> Result<(), String> {
    ok(fs::write(root.join("toy.toml"), TOY_CONFIG))?;
    medvlm(root, &["train", "--config", "toy.toml", "--out", "run/train"])?;
    medvlm(root, &["build-bench", "--task", "toy", "--size", "40", "--seed", "3", "--out", "run/bench"])?;
    medvlm(
        root,
        &[
            "eval", "--bench", "run/bench/bench.jsonl",
            "--endpoint", "local:run/train/checkpoints/stage2-instruct.ckpt",
            "--template", "plain", "--max-new-tokens", "8", "--concurrency", "4",
            "--out", "run/eval",
        ],
    )?;
    medvlm(root, &["score", "--results", "run/eval/results.jsonl"])
}

fn ac10_end_to_end() -> Outcome {
    let dirs = [ok(tempfile::tempdir())?, ok(tempfile::tempdir())?];
    for d in &dirs {
        pipeline(d.path())?;
    }
    let runs: Vec<PathBuf> = dirs.iter().map(|d| d.path().join("run")).collect();
    let files = artifact_files(&runs[0])?;
    ensure!(files == artifact_files(&runs[1])?, "runs wrote different file sets");
    for want in ["train/checkpoints/stage2-instruct.ckpt", "bench/bench.jsonl", "eval/results.jsonl", "eval/score.json"] {
        ensure!(files.iter().any(|f| f == want), "missing {want}");
    }
    for rel in &files {
        ensure!(ok(fs::read(runs[0].join(rel)))? == ok(fs::read(runs[1].join(rel)))?, "{rel} differs");
    }
    let (ma, mb) = (manifests(&runs[0])?, manifests(&runs[1])?);
    ensure!(ma.len() == 4, "expected 4 manifests, found {:?}", ma.keys());
    ensure!(ma == mb, "manifest digests differ: {ma:?} vs {mb:?}");
    Ok(format!("{} artifacts byte-identical; {} manifest digests equal", files.len(), ma.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", ac1_gradients),
        ("yarn identity and values", ac2_yarn),
        ("tiling oracle", ac3_tiling),
        ("curriculum freeze and rates", ac4_freeze_and_rates),
        ("toy training signal", ac5_toy_training),
        ("harness oracle", ac6_harness),
        ("benchmark builders", ac7_builders),
        ("overlap checker", ac8_overlap),
        ("metrics", ac9_metrics),
        ("end-to-end reproducibility", ac10_end_to_end),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.strip_prefix("AC")?.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("AC{n} PASS {name} [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("AC{n} FAIL {name} [{secs:.1} s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
