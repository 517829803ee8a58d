//! The training loop: one stage at a time, fresh optimizer moments per stage.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use medvlm_model::checkpoint::{save_checkpoint, Checkpoint};
use medvlm_model::model::PreparedImage;
use medvlm_model::sequence::SequencePlan;
use medvlm_model::{Module, Prompt, Vlm};
use medvlm_nn::init::stream_rng;
use medvlm_nn::optim::AdamWConfig;
use medvlm_nn::{adamw_step, cosine_lr, LrSchedule, OptimizerState, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrainExample};
use crate::error::{Result, TrainError};
use crate::stage::{freeze_mask, StageConfig, StageName};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: StageName,
    /// 1-based optimizer step within the stage.
    pub step: u64,
    pub lr: BTreeMap<Module, f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: StageName,
    pub wall_ms: u64,
}

/// Step records are deterministic; wall times are kept apart so that logs of
/// identical runs compare equal byte for byte.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub timings: Vec<StageTiming>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.steps.extend(other.steps);
        self.timings.extend(other.timings);
    }

    pub fn stage_losses(&self, stage: StageName) -> Vec<f64> {
        self.steps.iter().filter(|r| r.stage == stage).map(|r| r.loss).collect()
    }

    /// Mean loss over the first and over the last tenth of a stage's steps.
    pub fn smoothed_start_end(&self, stage: StageName) -> Option<(f64, f64)> {
        let losses = self.stage_losses(stage);
        if losses.is_empty() {
            return None;
        }
        let w = (losses.len() / 10).max(1);
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
    }

    pub fn steps_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }

    pub fn timings_jsonl(&self) -> String {
        self.timings
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }

    pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
        read_jsonl(path)
    }

    pub fn read_timings(path: &Path) -> Result<Vec<StageTiming>> {
        read_jsonl(path)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// On resume, the records of stages already done are carried over so the
/// log file ends up as if the run had never stopped.
fn earlier_log(dir: &Path, done: &[StageConfig]) -> Result<TrainLog> {
    let keep = |s: &StageName| done.iter().any(|d| d.name == *s);
    let mut log = TrainLog::default();
    if dir.join(LOG_FILE).exists() {
        log.steps = TrainLog::read_steps(&dir.join(LOG_FILE))?;
        log.steps.retain(|r| keep(&r.stage));
    }
    if dir.join(TIMINGS_FILE).exists() {
        log.timings = TrainLog::read_timings(&dir.join(TIMINGS_FILE))?;
        log.timings.retain(|r| keep(&r.stage));
    }
    Ok(log)
}

impl TrainLog {
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| TrainError::Io(e.error))?;
    Ok(())
}

struct Item {
    plan: SequencePlan,
    images: Vec<PreparedImage>,
}

fn prepare(model: &Vlm, example: &TrainExample, max_len: usize) -> Result<Item> {
    if example.completion.is_empty() {
        return Err(TrainError::Data(format!("example {} has an empty completion", example.id)));
    }
    let images = example
        .images
        .iter()
        .map(|img| model.prepare_image(img))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let prompt = Prompt {
        text: example.prompt.clone(),
        images,
        completion: example.completion.clone(),
    };
    let mut plan = model.plan(&prompt)?;
    plan.truncate_left(max_len.min(model.config().lm.max_seq_len))?;
    Ok(Item {
        plan,
        images: prompt.images,
    })
}

/// Everything a stage leaves behind besides the updated weights.
pub struct StageOutcome {
    pub log: TrainLog,
    /// One optimizer per module; frozen modules are never stepped.
    pub optimizers: BTreeMap<Module, OptimizerState>,
}

struct Step {
    step: u64,
    lr: BTreeMap<Module, f64>,
    loss: f64,
}

/// The optimization loop shared by curriculum stages and the backbone
/// warm-up. `label` keys the per-epoch data order.
fn optimize(
    model: &mut Vlm,
    stage: &StageConfig,
    label: &str,
    data: &Dataset,
    seed: u64,
) -> Result<(Vec<Step>, BTreeMap<Module, OptimizerState>)> {
    let mask = freeze_mask(model.params(), stage)?;
    if data.is_empty() {
        return Err(TrainError::Data(format!("dataset {} is empty", data.id)));
    }
    let items = data
        .examples
        .iter()
        .map(|e| prepare(model, e, stage.max_seq_len))
        .collect::<Result<Vec<_>>>()?;

    let module_paths: BTreeMap<Module, Vec<String>> = Module::ALL
        .iter()
        .map(|m| (*m, model.params().module_paths(*m)))
        .collect();
    let mut optimizers = BTreeMap::new();
    for (m, paths) in &module_paths {
        let tensors = paths
            .iter()
            .map(|p| model.params().get(p).cloned())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        optimizers.insert(*m, OptimizerState::new(&tensors, AdamWConfig::default()));
    }

    let total_steps = stage.total_steps(items.len());
    let mut schedules = BTreeMap::new();
    for (m, lr) in &stage.lr_map {
        let s = LrSchedule {
            base_lr: *lr,
            min_lr: stage.min_lr,
            total_steps,
            warmup_ratio: stage.warmup_ratio,
        };
        s.validate()?;
        schedules.insert(*m, s);
    }

    let trainable = |p: &str| mask.get(p).copied().unwrap_or(false);
    let per_step = stage.batch_size * stage.grad_accum;
    let mut steps = Vec::new();
    let mut step = 0u64;
    for epoch in 0..stage.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut stream_rng(seed, &format!("order/{label}/{epoch}")));
        for chunk in order.chunks(per_step) {
            step += 1;
            let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut loss_sum = 0.0;
            for &i in chunk {
                let item = &items[i];
                let (loss, grads) = model.loss_and_grads(&item.plan, &item.images, &trainable)?;
                loss_sum += loss;
                for (path, g) in grads {
                    match sum.get_mut(&path) {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        None => {
                            sum.insert(path, g);
                        }
                    }
                }
            }
            let n = chunk.len() as f64;
            let loss = loss_sum / n;
            if !loss.is_finite() || sum.values().any(|g| !g.all_finite()) {
                return Err(TrainError::NonFinite {
                    stage: label.to_string(),
                    step,
                    items: chunk.to_vec(),
                });
            }
            let mut lrs = BTreeMap::new();
            for (module, schedule) in &schedules {
                let lr = cosine_lr(step, schedule)?;
                lrs.insert(*module, lr);
                let paths = &module_paths[module];
                let mut params = paths
                    .iter()
                    .map(|p| model.params().get(p).cloned())
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let grads: Vec<Tensor> = paths
                    .iter()
                    .map(|p| {
                        let mut g = sum.remove(p).expect("gradient for every trainable path");
                        g.data_mut().iter_mut().for_each(|x| *x /= n);
                        g
                    })
                    .collect();
                adamw_step(&mut params, &grads, optimizers.get_mut(module).expect("all modules"), lr)?;
                for (p, t) in paths.iter().zip(params) {
                    model.params_mut().set(p, t)?;
                }
            }
            steps.push(Step { step, lr: lrs, loss });
        }
    }
    Ok((steps, optimizers))
}

/// Train `model` in place for one stage. `stage_index` keys the data order,
/// so a stage sees the same batches whether or not earlier stages ran in the
/// same process.
pub fn run_stage(
    model: &mut Vlm,
    stage: &StageConfig,
    stage_index: usize,
    data: &Dataset,
    seed: u64,
) -> Result<StageOutcome> {
    let started = Instant::now();
    let label = format!("{stage_index}/{}", stage.name);
    let (steps, optimizers) = optimize(model, stage, &label, data, seed)?;
    let log = TrainLog {
        steps: steps
            .into_iter()
            .map(|s| StepRecord {
                stage: stage.name,
                step: s.step,
                lr: s.lr,
                loss: s.loss,
            })
            .collect(),
        timings: vec![StageTiming {
            stage: stage.name,
            wall_ms: started.elapsed().as_millis() as u64,
        }],
    };
    Ok(StageOutcome { log, optimizers })
}

/// Text-only language-model warm-up, standing in for an open-weight
/// backbone before the curriculum starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub data_source: String,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "backbone_batch")]
    pub batch_size: usize,
    #[serde(default = "backbone_warmup")]
    pub warmup_ratio: f64,
}

fn backbone_batch() -> usize {
    8
}

fn backbone_warmup() -> f64 {
    0.03
}

impl BackboneConfig {
    fn as_stage(&self, max_seq_len: usize) -> StageConfig {
        StageConfig {
            name: StageName::Pretrain,
            trainable: [Module::Lm].into(),
            lr_map: [(Module::Lm, self.lr)].into(),
            epochs: self.epochs,
            max_seq_len,
            data_source: self.data_source.clone(),
            warmup_ratio: self.warmup_ratio,
            min_lr: 0.0,
            batch_size: self.batch_size,
            grad_accum: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.as_stage(1).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneStep {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Train only `lm.*` on `data`; returns the per-step losses.
pub fn warm_start_backbone(
    model: &mut Vlm,
    cfg: &BackboneConfig,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<BackboneStep>> {
    let stage = cfg.as_stage(model.config().lm.max_seq_len);
    let (steps, _) = optimize(model, &stage, "backbone", data, seed)?;
    Ok(steps
        .into_iter()
        .map(|s| BackboneStep {
            step: s.step,
            lr: s.lr[&Module::Lm],
            loss: s.loss,
        })
        .collect())
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub seed: u64,
    /// Where checkpoints and logs go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Index of the first stage to run; earlier stages are taken as done and
    /// `model` should be the checkpoint written after stage `first_stage - 1`.
    pub first_stage: usize,
}

pub struct CurriculumOutcome {
    pub model: Vlm,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(out_dir: &Path, index: usize, stage: StageName) -> PathBuf {
    out_dir.join("checkpoints").join(format!("stage{index}-{stage}.ckpt"))
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

/// Run `stages[first_stage..]` in order, checkpointing after each.
pub fn train_curriculum(
    mut model: Vlm,
    stages: &[StageConfig],
    datasets: &BTreeMap<String, Dataset>,
    opts: &TrainOptions,
) -> Result<CurriculumOutcome> {
    if opts.first_stage > stages.len() {
        return Err(TrainError::Config(format!(
            "cannot start at stage {} of {}",
            opts.first_stage,
            stages.len()
        )));
    }
    for s in stages {
        s.validate()?;
        if !datasets.contains_key(&s.data_source) {
            return Err(TrainError::MissingDataset(s.data_source.clone()));
        }
    }
    let mut log = TrainLog::default();
    if let (Some(dir), true) = (&opts.out_dir, opts.first_stage > 0) {
        log = earlier_log(dir, &stages[..opts.first_stage])?;
    }
    let mut checkpoints = Vec::new();
    for (index, stage) in stages.iter().enumerate().skip(opts.first_stage) {
        let outcome = run_stage(&mut model, stage, index, &datasets[&stage.data_source], opts.seed)?;
        log.extend(outcome.log);
        if let Some(dir) = &opts.out_dir {
            let path = checkpoint_path(dir, index, stage.name);
            let meta = BTreeMap::from([
                ("stage".to_string(), stage.name.to_string()),
                ("stage_index".to_string(), index.to_string()),
                ("seed".to_string(), opts.seed.to_string()),
            ]);
            save_checkpoint(
                &Checkpoint {
                    config: model.config().clone(),
                    params: model.params().clone(),
                    meta,
                },
                &path,
            )?;
            checkpoints.push(path);
            atomic_write(&dir.join(LOG_FILE), log.steps_jsonl().as_bytes())?;
            atomic_write(&dir.join(TIMINGS_FILE), log.timings_jsonl().as_bytes())?;
        }
    }
    Ok(CurriculumOutcome {
        model,
        log,
        checkpoints,
    })
}
