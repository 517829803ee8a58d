//! Stage definitions, profiles and freeze masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use medvlm_model::{Module, VlmParams};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Pretrain,
    Midtrain,
    Instruct,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Pretrain => "pretrain",
            StageName::Midtrain => "midtrain",
            StageName::Instruct => "instruct",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(StageName::Pretrain),
            "midtrain" => Ok(StageName::Midtrain),
            "instruct" => Ok(StageName::Instruct),
            other => Err(TrainError::Config(format!(
                "unknown stage `{other}` (expected pretrain, midtrain or instruct)"
            ))),
        }
    }
}

fn one() -> usize {
    1
}

fn default_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: StageName,
    pub trainable: BTreeSet<Module>,
    pub lr_map: BTreeMap<Module, f64>,
    pub epochs: usize,
    pub max_seq_len: usize,
    pub data_source: String,
    pub warmup_ratio: f64,
    #[serde(default)]
    pub min_lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub grad_accum: usize,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(format!("stage {}: {m}", self.name)));
        if self.trainable.is_empty() {
            return bad("trainable set is empty".into());
        }
        for (m, lr) in &self.lr_map {
            if !self.trainable.contains(m) {
                return bad(format!("learning rate given for frozen module {m}"));
            }
            if !(lr.is_finite() && *lr > 0.0) {
                return bad(format!("learning rate {lr} for {m} must be positive"));
            }
            if !(self.min_lr >= 0.0 && self.min_lr <= *lr) {
                return bad(format!("min_lr {} must lie in [0, {lr}]", self.min_lr));
            }
        }
        for m in &self.trainable {
            if !self.lr_map.contains_key(m) {
                return bad(format!("trainable module {m} has no learning rate"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 || self.max_seq_len == 0 {
            return bad("epochs, batch_size, grad_accum and max_seq_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1)", self.warmup_ratio));
        }
        if self.data_source.is_empty() {
            return bad("data_source is empty".into());
        }
        Ok(())
    }

    /// Optimizer steps for a dataset of `items` examples.
    pub fn total_steps(&self, items: usize) -> u64 {
        let per_epoch = items.div_ceil(self.batch_size * self.grad_accum);
        (per_epoch * self.epochs) as u64
    }
}

fn stage(name: StageName, lrs: &[(Module, f64)], data_source: &str, max_seq_len: usize) -> StageConfig {
    StageConfig {
        name,
        trainable: lrs.iter().map(|(m, _)| *m).collect(),
        lr_map: lrs.iter().copied().collect(),
        epochs: 1,
        max_seq_len,
        data_source: data_source.into(),
        warmup_ratio: 0.03,
        min_lr: 0.0,
        batch_size: default_batch(),
        grad_accum: 1,
    }
}

/// Pretraining trains the projector only at 1e-3; mid-training adds the
/// language model at 2e-5; instruction tuning trains everything at 8e-5.
/// The vision encoder stays frozen until the last stage.
pub fn default_stages() -> [StageConfig; 3] {
    use Module::*;
    [
        stage(StageName::Pretrain, &[(Projector, 1e-3)], "pretrain", 64),
        stage(StageName::Midtrain, &[(Projector, 2e-5), (Lm, 2e-5)], "midtrain", 256),
        stage(StageName::Instruct, &[(Vision, 8e-5), (Projector, 8e-5), (Lm, 8e-5)], "instruct", 256),
    ]
}

pub const PROFILES: &[&str] = &["default", "pt-vision-trainable"];

/// Named stage presets. `default` is [`default_stages`]; `pt-vision-trainable`
/// also trains the vision encoder during pretraining, at the projector rate.
pub fn profile_stages(profile: &str) -> Result<[StageConfig; 3]> {
    let mut stages = default_stages();
    match profile {
        "default" => {}
        "pt-vision-trainable" => {
            let s = &mut stages[0];
            s.trainable.insert(Module::Vision);
            let lr = s.lr_map[&Module::Projector];
            s.lr_map.insert(Module::Vision, lr);
        }
        other => {
            return Err(TrainError::Config(format!(
                "unknown profile `{other}` (known: {})",
                PROFILES.join(", ")
            )))
        }
    }
    Ok(stages)
}

/// `true` for every parameter whose module is trained in `stage`.
pub fn freeze_mask(params: &VlmParams, stage: &StageConfig) -> Result<BTreeMap<String, bool>> {
    stage.validate()?;
    params
        .paths()
        .map(|p| {
            let module = Module::of_path(p)
                .ok_or_else(|| TrainError::Config(format!("parameter {p} has no module")))?;
            Ok((p.to_string(), stage.trainable.contains(&module)))
        })
        .collect()
}
