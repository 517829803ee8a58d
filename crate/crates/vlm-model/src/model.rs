//! Forward pass, loss and greedy decoding for the three-part model.

use std::collections::BTreeMap;

use image::RgbImage;
use medvlm_nn::{yarn_scale, Graph, NodeId, Tensor};

use crate::config::VlmConfig;
use crate::error::{ModelError, Result};
use crate::image_io::crop_to_patches;
use crate::params::VlmParams;
use crate::sequence::{assemble_sequence, Segment, SequencePlan};
use crate::tiling::{plan_tiling, tile_image, TilingPlan};
use crate::tokenizer::{Tokenizer, BOS, EOS};

/// An image cut into crops and flattened into patch rows, one tensor per crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedImage {
    pub plan: TilingPlan,
    pub crops: Vec<Tensor>,
}

/// Prompt text with `<image>` markers, the images they refer to, and an
/// optional completion to be trained on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub images: Vec<PreparedImage>,
    pub completion: String,
}

pub struct Vlm {
    config: VlmConfig,
    params: VlmParams,
    inv_freq: Vec<f64>,
    /// Multiplier on attention logits, the square of the YaRN temperature.
    logit_scale: f64,
}

/// Parameters placed on a graph; frozen ones as constants.
struct Bound {
    nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    fn new(g: &mut Graph, params: &VlmParams, trainable: &dyn Fn(&str) -> bool) -> Self {
        let nodes = params
            .iter()
            .map(|(path, t)| {
                let id = if trainable(path) {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                };
                (path.to_string(), id)
            })
            .collect();
        Self { nodes }
    }

    fn get(&self, path: &str) -> NodeId {
        self.nodes[path]
    }
}

impl Vlm {
    pub fn new(config: VlmConfig, params: VlmParams) -> Result<Self> {
        config.validate()?;
        // from_tensors checks every path and shape against the config
        let params = VlmParams::from_tensors(&config, params.iter().map(|(p, t)| (p.to_string(), t.clone())).collect())?;
        let (inv_freq, temperature) = yarn_scale(&config.rope)?;
        Ok(Self {
            config,
            params,
            inv_freq,
            logit_scale: temperature * temperature,
        })
    }

    pub fn init(config: VlmConfig, seed: u64) -> Result<Self> {
        let params = VlmParams::init(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &VlmConfig {
        &self.config
    }

    pub fn params(&self) -> &VlmParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut VlmParams {
        &mut self.params
    }

    pub fn into_params(self) -> VlmParams {
        self.params
    }

    pub fn prepare_image(&self, image: &RgbImage) -> Result<PreparedImage> {
        let v = &self.config.vision;
        let plan = plan_tiling(image.width(), image.height(), v)?;
        let crops = tile_image(image, &plan, v)?
            .iter()
            .map(|c| crop_to_patches(c, v.tile_size, v.patch_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedImage { plan, crops })
    }

    /// Vision tokens contributed by one prepared image.
    pub fn image_token_count(&self, image: &PreparedImage) -> usize {
        image.crops.len() * self.config.vision.tokens_per_tile()
    }

    fn block(
        &self,
        g: &mut Graph,
        p: &Bound,
        prefix: &str,
        x: NodeId,
        heads: usize,
        rope: Option<&[usize]>,
        causal: bool,
        logit_scale: f64,
    ) -> Result<NodeId> {
        let w = |name: &str| p.get(&format!("{prefix}.{name}"));
        let h = g.layer_norm(x, w("ln1.gain"), w("ln1.bias"))?;
        let mut q = g.matmul(h, w("attn.q.weight"))?;
        let mut k = g.matmul(h, w("attn.k.weight"))?;
        let v = g.matmul(h, w("attn.v.weight"))?;
        if let Some(positions) = rope {
            q = g.rope(q, positions, &self.inv_freq)?;
            k = g.rope(k, positions, &self.inv_freq)?;
        }
        let a = g.attention(q, k, v, heads, causal, logit_scale)?;
        let o = g.matmul(a, w("attn.o.weight"))?;
        let x = g.add(x, o)?;
        let h = g.layer_norm(x, w("ln2.gain"), w("ln2.bias"))?;
        let h = g.linear(h, w("mlp.fc1.weight"), Some(w("mlp.fc1.bias")))?;
        let h = g.gelu(h);
        let h = g.linear(h, w("mlp.fc2.weight"), Some(w("mlp.fc2.bias")))?;
        Ok(g.add(x, h)?)
    }

    /// Vision tokens `[crops * tokens_per_tile, 4 * width]`.
    fn encode_tiles_on(&self, g: &mut Graph, p: &Bound, crops: &[Tensor]) -> Result<NodeId> {
        let v = &self.config.vision;
        if crops.is_empty() {
            return Err(ModelError::Image("no crops to encode".into()));
        }
        let mut merged = Vec::with_capacity(crops.len());
        for crop in crops {
            if crop.shape() != [v.patches_per_tile(), v.patch_dim()] {
                return Err(ModelError::Image(format!(
                    "crop patches {:?}, expected [{}, {}]",
                    crop.shape(),
                    v.patches_per_tile(),
                    v.patch_dim()
                )));
            }
            let x = g.input(crop.clone());
            let x = g.linear(x, p.get("vision.patch_embed.weight"), Some(p.get("vision.patch_embed.bias")))?;
            let mut x = g.add(x, p.get("vision.pos_embed"))?;
            for i in 0..v.layers {
                x = self.block(g, p, &format!("vision.layers.{i}"), x, v.heads, None, false, 1.0)?;
            }
            let x = g.layer_norm(x, p.get("vision.ln_final.gain"), p.get("vision.ln_final.bias"))?;
            merged.push(g.space_to_depth(x, v.patch_grid(), v.merge_factor())?);
        }
        Ok(g.concat_rows(&merged)?)
    }

    fn project_on(&self, g: &mut Graph, p: &Bound, tokens: NodeId) -> Result<NodeId> {
        let width = g.value(tokens).row_width();
        if width != self.config.vision.merged_width() {
            return Err(ModelError::Nn(medvlm_nn::NnError::Shape(format!(
                "projector expects width {}, got {width}",
                self.config.vision.merged_width()
            ))));
        }
        let h = g.linear(tokens, p.get("projector.fc1.weight"), Some(p.get("projector.fc1.bias")))?;
        let h = g.gelu(h);
        Ok(g.linear(h, p.get("projector.fc2.weight"), Some(p.get("projector.fc2.bias")))?)
    }

    /// Decoder over an assembled sequence; `blocks[i]` holds image `i`'s embeddings.
    fn decode_on(&self, g: &mut Graph, p: &Bound, plan: &SequencePlan, blocks: &[NodeId]) -> Result<NodeId> {
        let lm = &self.config.lm;
        let len = plan.len();
        if len == 0 {
            return Err(ModelError::Sequence("empty sequence".into()));
        }
        if len > lm.max_seq_len {
            return Err(ModelError::Overlength { len, max: lm.max_seq_len });
        }
        let mut parts = Vec::with_capacity(plan.segments.len());
        for seg in &plan.segments {
            match seg {
                Segment::Text { ids, .. } => {
                    let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
                    parts.push(g.embedding(p.get("lm.embed.weight"), &ids)?);
                }
                Segment::Image { index, len } => {
                    let block = *blocks.get(*index).ok_or_else(|| {
                        ModelError::Sequence(format!("no embeddings for image {index}"))
                    })?;
                    if g.value(block).rows() != *len {
                        return Err(ModelError::Sequence(format!(
                            "image {index} has {} tokens, plan expects {len}",
                            g.value(block).rows()
                        )));
                    }
                    parts.push(block);
                }
            }
        }
        let mut x = g.concat_rows(&parts)?;
        let positions: Vec<usize> = (0..len).collect();
        for i in 0..lm.layers {
            x = self.block(g, p, &format!("lm.layers.{i}"), x, lm.heads, Some(&positions), true, self.logit_scale)?;
        }
        let x = g.layer_norm(x, p.get("lm.ln_final.gain"), p.get("lm.ln_final.bias"))?;
        Ok(g.matmul(x, p.get("lm.head.weight"))?)
    }

    fn images_on(&self, g: &mut Graph, p: &Bound, images: &[PreparedImage]) -> Result<Vec<NodeId>> {
        images
            .iter()
            .map(|img| {
                let t = self.encode_tiles_on(g, p, &img.crops)?;
                self.project_on(g, p, t)
            })
            .collect()
    }

    /// Plan for a prompt: `BOS`, prompt text, then the completion followed by `EOS`.
    pub fn plan(&self, prompt: &Prompt) -> Result<SequencePlan> {
        let tok = Tokenizer;
        let mut ids = vec![BOS];
        ids.extend(tok.encode_with_images(&prompt.text));
        let blocks: Vec<usize> = prompt.images.iter().map(|i| self.image_token_count(i)).collect();
        let mut completion = Vec::new();
        if !prompt.completion.is_empty() {
            completion = tok.encode(&prompt.completion);
            completion.push(EOS);
        }
        assemble_sequence(&ids, &blocks, &completion)
    }

    /// Encoder output for a list of crops, no gradients.
    pub fn encode_tiles(&self, crops: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, &|_| false);
        let out = self.encode_tiles_on(&mut g, &p, crops)?;
        Ok(g.value(out).clone())
    }

    pub fn project(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, &|_| false);
        let x = g.input(tokens.clone());
        let out = self.project_on(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    /// Logits `[seq, vocab]` for an assembled plan and its images.
    pub fn forward(&self, plan: &SequencePlan, images: &[PreparedImage]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, &|_| false);
        let blocks = self.images_on(&mut g, &p, images)?;
        let out = self.decode_on(&mut g, &p, plan, &blocks)?;
        Ok(g.value(out).clone())
    }

    /// Decoder over precomputed LM-space embeddings `[seq, d_model]`.
    pub fn forward_embeddings(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, &|_| false);
        let x = g.input(embeddings.clone());
        let plan = SequencePlan {
            segments: vec![Segment::Image {
                index: 0,
                len: embeddings.rows(),
            }],
        };
        let out = self.decode_on(&mut g, &p, &plan, &[x])?;
        Ok(g.value(out).clone())
    }

    /// Mean next-token loss over labelled positions, and its gradient for every
    /// parameter accepted by `trainable`.
    pub fn loss_and_grads(
        &self,
        plan: &SequencePlan,
        images: &[PreparedImage],
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, trainable);
        let blocks = self.images_on(&mut g, &p, images)?;
        let logits = self.decode_on(&mut g, &p, plan, &blocks)?;
        let loss = g.cross_entropy(logits, &plan.targets())?;
        let value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        let mut out = BTreeMap::new();
        for (path, t) in self.params.iter() {
            if trainable(path) {
                let grad = grads
                    .take(p.get(path))
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                out.insert(path.to_string(), grad);
            }
        }
        Ok((value, out))
    }

    pub fn loss(&self, plan: &SequencePlan, images: &[PreparedImage]) -> Result<f64> {
        Ok(self.loss_and_grads(plan, images, &|_| false)?.0)
    }

    /// Greedy decoding: argmax at each step, lowest id on ties, stopping at a
    /// stop token (not emitted) or after `max_new_tokens`.
    pub fn generate_greedy(&self, prompt: &Prompt, max_new_tokens: usize, stop: &[u32]) -> Result<String> {
        let lm = &self.config.lm;
        let prompt = Prompt {
            completion: String::new(),
            ..prompt.clone()
        };
        let mut plan = self.plan(&prompt)?;
        if plan.len() > lm.max_seq_len {
            return Err(ModelError::Overlength {
                len: plan.len(),
                max: lm.max_seq_len,
            });
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, &|_| false);
        let blocks = self.images_on(&mut g, &p, &prompt.images)?;
        let block_values: Vec<Tensor> = blocks.iter().map(|b| g.value(*b).clone()).collect();
        let mut out = Vec::new();
        for _ in 0..max_new_tokens {
            if plan.len() >= lm.max_seq_len {
                break;
            }
            // fresh graph per step; image embeddings are reused as constants
            let mut g = Graph::new();
            let p = Bound::new(&mut g, &self.params, &|_| false);
            let blocks: Vec<NodeId> = block_values.iter().map(|t| g.input(t.clone())).collect();
            let logits = self.decode_on(&mut g, &p, &plan, &blocks)?;
            let logits = g.value(logits);
            let last = logits.row(logits.rows() - 1);
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            let next = best as u32;
            if stop.contains(&next) {
                break;
            }
            out.push(next);
            plan.push_text(next);
        }
        Ok(Tokenizer.decode(&out))
    }
}
