//! End-to-end training from a [`RunConfig`]: optional backbone warm-up, then
//! the configured stages, with everything written under `out_dir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use medvlm_model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use medvlm_model::Vlm;

use crate::config::RunConfig;
use crate::error::{Result, TrainError};
use crate::train::{
    atomic_write, checkpoint_path, train_curriculum, warm_start_backbone, CurriculumOutcome, TrainOptions,
};

pub const BACKBONE_CHECKPOINT: &str = "checkpoints/backbone.ckpt";
pub const BACKBONE_LOG: &str = "backbone_log.jsonl";

/// `out_dir` from the config, resolved against `base_dir` when relative.
pub fn out_dir(cfg: &RunConfig, base_dir: &Path) -> PathBuf {
    base_dir.join(&cfg.out_dir)
}

/// Train per `cfg`. With `resume_from = Some(k)` the checkpoint written after
/// stage `k - 1` is loaded and stages `k..` are run.
pub fn run(cfg: &RunConfig, base_dir: &Path, resume_from: Option<usize>) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    let stages = cfg.resolve_stages()?;
    let datasets = cfg.load_datasets(base_dir)?;
    let out = out_dir(cfg, base_dir);
    let first_stage = resume_from.unwrap_or(0);

    let model = if first_stage == 0 {
        let mut model = Vlm::init(cfg.model.clone(), cfg.seed)?;
        if let Some(b) = &cfg.backbone {
            let steps = warm_start_backbone(&mut model, b, &datasets[&b.data_source], cfg.seed)?;
            let lines: String = steps
                .iter()
                .map(|s| serde_json::to_string(s).expect("serializable") + "\n")
                .collect();
            atomic_write(&out.join(BACKBONE_LOG), lines.as_bytes())?;
            save_checkpoint(
                &Checkpoint {
                    config: model.config().clone(),
                    params: model.params().clone(),
                    meta: BTreeMap::from([("stage".to_string(), "backbone".to_string())]),
                },
                &out.join(BACKBONE_CHECKPOINT),
            )?;
        }
        model
    } else {
        let prev = stages.get(first_stage - 1).ok_or_else(|| {
            TrainError::Config(format!("cannot resume at stage {first_stage} of {}", stages.len()))
        })?;
        let ckpt = load_checkpoint(&checkpoint_path(&out, first_stage - 1, prev.name))?;
        if ckpt.config != cfg.model {
            return Err(TrainError::Config("checkpoint model config differs from the run config".into()));
        }
        Vlm::new(ckpt.config, ckpt.params)?
    };

    train_curriculum(
        model,
        &stages,
        &datasets,
        &TrainOptions {
            seed: cfg.seed,
            out_dir: Some(out),
            first_stage,
        },
    )
}
