//! Declarative run configuration (TOML).
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/toy"
//! profile = "default"           # or "pt-vision-trainable"
//! stages = ["pretrain", "midtrain", "instruct"]
//!
//! [datasets.pretrain]
//! generator = "captions"        # captions | descriptions | instruct | text
//! size = 400
//!
//! [datasets.extra]
//! path = "extra.jsonl"          # {id, prompt, completion, images} records
//!
//! [backbone]                    # optional text-only warm-up of the LM
//! data_source = "text"
//! epochs = 6
//! lr = 0.003
//!
//! [datasets.text]
//! generator = "text"
//! size = 400
//!
//! [overrides.pretrain]
//! epochs = 2
//! lr_map = { projector = 0.002 }
//! ```
//!
//! Unknown keys anywhere are errors. Relative paths resolve against the
//! directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use medvlm_model::{Module, VlmConfig};
use serde::{Deserialize, Serialize};

use crate::data::{caption_corpus, description_corpus, instruct_corpus, load_jsonl, text_corpus, Dataset};
use crate::error::{Result, TrainError};
use crate::stage::{profile_stages, StageConfig, StageName};
use crate::train::BackboneConfig;

/// The desk-scale toy run used by the examples and tests.
pub const TOY_CONFIG: &str = include_str!("../configs/toy.toml");

pub const GENERATORS: &[&str] = &["captions", "descriptions", "instruct", "text"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Generator seed; the run seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Per-stage replacements for profile values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<BTreeSet<Module>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_map: Option<BTreeMap<Module, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_accum: Option<usize>,
}

fn default_profile() -> String {
    "default".into()
}

fn all_stages() -> Vec<StageName> {
    vec![StageName::Pretrain, StageName::Midtrain, StageName::Instruct]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default = "all_stages")]
    pub stages: Vec<StageName>,
    #[serde(default)]
    pub model: VlmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetSpec>,
    #[serde(default)]
    pub overrides: BTreeMap<StageName, StageOverride>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            TrainError::Config(m) => TrainError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let mut seen = BTreeSet::new();
        let mut last = None;
        for s in &self.stages {
            if !seen.insert(*s) {
                return Err(TrainError::Config(format!("stage {s} listed twice")));
            }
            if last.is_some_and(|l| l > *s) {
                return Err(TrainError::Config(
                    "stages must follow the order pretrain, midtrain, instruct".into(),
                ));
            }
            last = Some(*s);
        }
        for (id, spec) in &self.datasets {
            match (&spec.generator, &spec.path) {
                (Some(g), None) => {
                    if !GENERATORS.contains(&g.as_str()) {
                        return Err(TrainError::Config(format!("dataset {id}: unknown generator `{g}`")));
                    }
                    if spec.size.unwrap_or(0) == 0 {
                        return Err(TrainError::Config(format!("dataset {id}: generator needs a positive size")));
                    }
                }
                (None, Some(_)) => {
                    if spec.size.is_some() || spec.seed.is_some() {
                        return Err(TrainError::Config(format!(
                            "dataset {id}: size and seed only apply to generators"
                        )));
                    }
                }
                _ => {
                    return Err(TrainError::Config(format!(
                        "dataset {id}: give exactly one of generator or path"
                    )))
                }
            }
        }
        for s in self.resolve_stages()? {
            s.validate()?;
        }
        if let Some(b) = &self.backbone {
            b.validate()?;
        }
        Ok(())
    }

    /// Profile stages restricted to `stages`, with overrides applied.
    pub fn resolve_stages(&self) -> Result<Vec<StageConfig>> {
        let base = profile_stages(&self.profile)?;
        let mut out = Vec::new();
        for mut s in base {
            if !self.stages.contains(&s.name) {
                continue;
            }
            if let Some(o) = self.overrides.get(&s.name) {
                if let Some(v) = &o.trainable {
                    s.trainable = v.clone();
                    s.lr_map.retain(|m, _| v.contains(m));
                }
                if let Some(v) = &o.lr_map {
                    s.lr_map.extend(v.iter().map(|(k, v)| (*k, *v)));
                }
                if let Some(v) = o.epochs {
                    s.epochs = v;
                }
                if let Some(v) = o.max_seq_len {
                    s.max_seq_len = v;
                }
                if let Some(v) = &o.data_source {
                    s.data_source = v.clone();
                }
                if let Some(v) = o.warmup_ratio {
                    s.warmup_ratio = v;
                }
                if let Some(v) = o.min_lr {
                    s.min_lr = v;
                }
                if let Some(v) = o.batch_size {
                    s.batch_size = v;
                }
                if let Some(v) = o.grad_accum {
                    s.grad_accum = v;
                }
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Build every dataset a resolved stage or the backbone warm-up refers
    /// to; missing ids fail before anything is generated.
    pub fn load_datasets(&self, base_dir: &Path) -> Result<BTreeMap<String, Dataset>> {
        let stages = self.resolve_stages()?;
        let mut wanted: BTreeSet<&str> = stages.iter().map(|s| s.data_source.as_str()).collect();
        if let Some(b) = &self.backbone {
            wanted.insert(&b.data_source);
        }
        if let Some(id) = wanted.iter().find(|id| !self.datasets.contains_key(**id)) {
            return Err(TrainError::MissingDataset(id.to_string()));
        }
        let mut out = BTreeMap::new();
        for id in wanted {
            let spec = &self.datasets[id];
            let ds = match (&spec.generator, &spec.path) {
                (Some(g), _) => {
                    let n = spec.size.unwrap_or(0);
                    let seed = spec.seed.unwrap_or(self.seed);
                    match g.as_str() {
                        "captions" => caption_corpus(id, n, seed),
                        "descriptions" => description_corpus(id, n, seed),
                        "text" => text_corpus(id, n, seed),
                        _ => instruct_corpus(id, n, seed),
                    }
                }
                (None, Some(p)) => load_jsonl(id, &base_dir.join(p))?,
                (None, None) => unreachable!("validated"),
            };
            out.insert(id.to_string(), ds);
        }
        Ok(out)
    }

    /// Canonical serialization of the effective configuration.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
