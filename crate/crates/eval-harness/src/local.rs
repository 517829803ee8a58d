//! Decoding with an in-process model checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use medvlm_model::checkpoint::{encode_checkpoint, load_checkpoint, Checkpoint};
use medvlm_model::image_io::load_ppm;
use medvlm_model::tokenizer::{EOS, IMAGE_MARKER};
use medvlm_model::{ModelError, Prompt, Vlm};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::decode::{AttemptError, DecodeRequest, Decoder};
use crate::error::Result;
use crate::template::{ChatMessage, Part, Role};

pub struct LocalDecoder {
    model: Vlm,
    image_root: PathBuf,
    weights_sha256: String,
}

/// Flatten chat messages into the model's plain prompt: the system text,
/// then each user turn as its images followed by its text, each assistant
/// turn as its text, one turn per line.
pub fn render_local(messages: &[ChatMessage]) -> (String, Vec<String>) {
    let mut text = String::new();
    let mut images = Vec::new();
    for m in messages {
        for p in &m.content {
            match p {
                Part::Image { path } if m.role == Role::User => {
                    text.push_str(IMAGE_MARKER);
                    images.push(path.clone());
                }
                Part::Image { .. } => {}
                // a literal marker in the text must not become a placeholder
                Part::Text { text: t } => text.push_str(&t.replace(IMAGE_MARKER, "<img>")),
            }
        }
        text.push('\n');
    }
    (text, images)
}

impl LocalDecoder {
    pub fn new(model: Vlm, image_root: impl Into<PathBuf>) -> Result<Self> {
        let bytes = encode_checkpoint(&Checkpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            meta: BTreeMap::new(),
        })?;
        Ok(Self {
            model,
            image_root: image_root.into(),
            weights_sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    pub fn from_checkpoint(path: &Path, image_root: impl Into<PathBuf>) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        Self::new(Vlm::new(ckpt.config, ckpt.params)?, image_root)
    }

    fn run(&self, req: &DecodeRequest) -> std::result::Result<String, ModelError> {
        let (text, paths) = render_local(req.messages);
        let images = paths
            .iter()
            .map(|p| load_ppm(&self.image_root.join(p)).and_then(|img| self.model.prepare_image(&img)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let prompt = Prompt {
            text,
            images,
            completion: String::new(),
        };
        let mut out = self.model.generate_greedy(&prompt, req.params.max_new_tokens, &[EOS])?;
        if let Some(cut) = req.params.stop.iter().filter_map(|s| out.find(s.as_str())).min() {
            out.truncate(cut);
        }
        Ok(out)
    }
}

impl Decoder for LocalDecoder {
    fn attempt(&self, req: &DecodeRequest) -> std::result::Result<String, AttemptError> {
        self.run(req).map_err(|e| AttemptError::Malformed(e.to_string()))
    }

    fn describe(&self) -> Value {
        json!({"kind": "local", "weights_sha256": self.weights_sha256})
    }
}
