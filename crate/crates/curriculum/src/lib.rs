//! Staged training: pretraining aligns the projector with the language model
//! frozen, mid-training adapts the language model on longer image-text pairs,
//! and instruction tuning updates every module. Each stage has its own freeze
//! mask, per-module learning rates and a fresh optimizer.

pub mod config;
pub mod data;
pub mod error;
pub mod run;
pub mod stage;
pub mod train;

pub use config::{DatasetSpec, RunConfig, StageOverride, TOY_CONFIG};
pub use data::{Dataset, TrainExample};
pub use error::{Result, TrainError};
pub use stage::{default_stages, freeze_mask, profile_stages, StageConfig, StageName};
pub use train::{
    run_stage, train_curriculum, warm_start_backbone, BackboneConfig, CurriculumOutcome, StageOutcome,
    StepRecord, TrainLog, TrainOptions,
};
