//! A three-part vision-language model small enough to train on a laptop CPU.
//!
//! Images are split into an aspect-matched grid of square tiles (plus a
//! global thumbnail), each tile is encoded by a small pre-norm ViT, 2x2
//! neighbouring patch tokens are merged by space-to-depth, and a two-layer
//! MLP projects the merged tokens into the decoder's embedding space where
//! they replace `<image>` placeholders in the token stream.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod image_io;
pub mod model;
pub mod params;
pub mod sequence;
pub mod tiling;
pub mod tokenizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{LmConfig, VisionConfig, VlmConfig};
pub use error::{ModelError, Result};
pub use model::{PreparedImage, Prompt, Vlm};
pub use params::{Module, VlmParams};
pub use sequence::{assemble_sequence, SequencePlan};
pub use tiling::{plan_tiling, tile_image, TilingPlan};
pub use tokenizer::Tokenizer;
