//! All trainable tensors, addressed by dotted path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use medvlm_nn::init::{stream_rng, truncated_normal, INIT_STD};
use medvlm_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::VlmConfig;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Vision,
    Projector,
    Lm,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Vision, Module::Projector, Module::Lm];

    pub fn name(self) -> &'static str {
        match self {
            Module::Vision => "vision",
            Module::Projector => "projector",
            Module::Lm => "lm",
        }
    }

    /// Module owning a dotted path, by its first component.
    pub fn of_path(path: &str) -> Option<Module> {
        path.split('.').next().and_then(|p| p.parse().ok())
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Module {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Module::Vision),
            "projector" => Ok(Module::Projector),
            "lm" => Ok(Module::Lm),
            other => Err(ModelError::Config(format!(
                "unknown module `{other}` (expected vision, projector or lm)"
            ))),
        }
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every tensor of a model with this configuration, in construction order.
fn layout(cfg: &VlmConfig) -> Vec<(String, Vec<usize>, Init)> {
    let v = &cfg.vision;
    let lm = &cfg.lm;
    let mut out = Vec::new();
    let mut push = |path: String, shape: Vec<usize>, init: Init| out.push((path, shape, init));
    let block = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str, d: usize, hidden: usize| {
        for ln in ["ln1", "ln2"] {
            push(format!("{prefix}.{ln}.gain"), vec![d], Init::Ones);
            push(format!("{prefix}.{ln}.bias"), vec![d], Init::Zeros);
        }
        for proj in ["q", "k", "v", "o"] {
            push(format!("{prefix}.attn.{proj}.weight"), vec![d, d], Init::Normal);
        }
        push(format!("{prefix}.mlp.fc1.weight"), vec![d, hidden], Init::Normal);
        push(format!("{prefix}.mlp.fc1.bias"), vec![hidden], Init::Zeros);
        push(format!("{prefix}.mlp.fc2.weight"), vec![hidden, d], Init::Normal);
        push(format!("{prefix}.mlp.fc2.bias"), vec![d], Init::Zeros);
    };

    push("vision.patch_embed.weight".into(), vec![v.patch_dim(), v.width], Init::Normal);
    push("vision.patch_embed.bias".into(), vec![v.width], Init::Zeros);
    push("vision.pos_embed".into(), vec![v.patches_per_tile(), v.width], Init::Normal);
    for i in 0..v.layers {
        block(&mut push, &format!("vision.layers.{i}"), v.width, 4 * v.width);
    }
    push("vision.ln_final.gain".into(), vec![v.width], Init::Ones);
    push("vision.ln_final.bias".into(), vec![v.width], Init::Zeros);

    push("projector.fc1.weight".into(), vec![v.merged_width(), lm.d_model], Init::Normal);
    push("projector.fc1.bias".into(), vec![lm.d_model], Init::Zeros);
    push("projector.fc2.weight".into(), vec![lm.d_model, lm.d_model], Init::Normal);
    push("projector.fc2.bias".into(), vec![lm.d_model], Init::Zeros);

    push("lm.embed.weight".into(), vec![lm.vocab_size, lm.d_model], Init::Normal);
    for i in 0..lm.layers {
        block(&mut push, &format!("lm.layers.{i}"), lm.d_model, lm.mlp_ratio * lm.d_model);
    }
    push("lm.ln_final.gain".into(), vec![lm.d_model], Init::Ones);
    push("lm.ln_final.bias".into(), vec![lm.d_model], Init::Zeros);
    push("lm.head.weight".into(), vec![lm.d_model, lm.vocab_size], Init::Normal);
    out
}

/// Parameters of the vision encoder, projector and language model.
///
/// The path set is fixed by the configuration; [`VlmParams::set`] can replace
/// a tensor but never add or reshape one.
#[derive(Clone, Debug, PartialEq)]
pub struct VlmParams {
    tensors: BTreeMap<String, Tensor>,
}

impl VlmParams {
    pub fn init(cfg: &VlmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tensors = layout(cfg)
            .into_iter()
            .map(|(path, shape, init)| {
                let t = match init {
                    Init::Normal => truncated_normal(&shape, INIT_STD, &mut stream_rng(seed, &path)),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, 1.0),
                };
                (path, t)
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Rebuild from stored tensors, which must match the layout of `cfg` exactly.
    pub fn from_tensors(cfg: &VlmConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let mut out = BTreeMap::new();
        for (path, shape, _) in layout(cfg) {
            let t = tensors
                .remove(&path)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {path}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "{path}: stored shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            out.insert(path, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self { tensors: out })
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| ModelError::Config(format!("no parameter {path}")))
    }

    pub fn set(&mut self, path: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(path)
            .ok_or_else(|| ModelError::Config(format!("no parameter {path}")))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::Config(format!(
                "{path}: shape {:?} cannot replace {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Paths belonging to one module, in sorted order.
    pub fn module_paths(&self, module: Module) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|p| Module::of_path(p) == Some(module))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((pa, a), (pb, b))| pa == pb && a.bitwise_eq(b))
    }
}
