use medvlm_nn::RopeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionConfig {
    pub tile_size: usize,
    pub patch_size: usize,
    pub max_tiles: usize,
    pub include_thumbnail: bool,
    /// Put the thumbnail before the tiles instead of after them.
    #[serde(default)]
    pub thumbnail_first: bool,
    /// Per-side token reduction before projection; 0.5 merges 2x2 patches.
    pub downsample_ratio: f64,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            tile_size: 32,
            patch_size: 8,
            max_tiles: 12,
            include_thumbnail: true,
            thumbnail_first: false,
            downsample_ratio: 0.5,
            width: 16,
            layers: 1,
            heads: 2,
        }
    }
}

impl VisionConfig {
    /// The production front-end: 336-pixel tiles, 14-pixel patches, up to 12
    /// tiles with a thumbnail, 0.5 downsampling.
    pub fn production() -> Self {
        Self {
            tile_size: 336,
            patch_size: 14,
            max_tiles: 12,
            include_thumbnail: true,
            thumbnail_first: false,
            downsample_ratio: 0.5,
            width: 1024,
            layers: 24,
            heads: 16,
        }
    }

    pub fn patch_grid(&self) -> usize {
        self.tile_size / self.patch_size
    }

    pub fn patches_per_tile(&self) -> usize {
        self.patch_grid() * self.patch_grid()
    }

    /// Side length of the space-to-depth neighbourhood, `1 / downsample_ratio`.
    pub fn merge_factor(&self) -> usize {
        (1.0 / self.downsample_ratio).round() as usize
    }

    pub fn tokens_per_tile(&self) -> usize {
        let g = self.patch_grid() / self.merge_factor();
        g * g
    }

    /// Channel width of a merged token, the projector's input width.
    pub fn merged_width(&self) -> usize {
        self.width * self.merge_factor() * self.merge_factor()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.tile_size == 0 || self.patch_size == 0 || self.tile_size % self.patch_size != 0 {
            return bad(format!(
                "tile_size {} must be a positive multiple of patch_size {}",
                self.tile_size, self.patch_size
            ));
        }
        if !(self.downsample_ratio > 0.0 && self.downsample_ratio <= 1.0) {
            return bad(format!("downsample_ratio {} outside (0, 1]", self.downsample_ratio));
        }
        let inv = 1.0 / self.downsample_ratio;
        if (inv - inv.round()).abs() > 1e-9 {
            return bad(format!(
                "1 / downsample_ratio = {inv} is not an integer merge factor"
            ));
        }
        if self.patch_grid() % self.merge_factor() != 0 {
            return bad(format!(
                "patch grid {} not divisible by merge factor {}",
                self.patch_grid(),
                self.merge_factor()
            ));
        }
        if self.max_tiles == 0 {
            return bad("max_tiles must be at least 1".into());
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!(
                "vision width {} must split evenly into {} heads",
                self.width, self.heads
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_seq_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::tokenizer::VOCAB_SIZE,
            d_model: 32,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            max_seq_len: 256,
        }
    }
}

impl LmConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmConfig {
    pub vision: VisionConfig,
    pub lm: LmConfig,
    pub rope: RopeConfig,
}

impl Default for VlmConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            rope: RopeConfig::vanilla(lm.head_dim(), lm.max_seq_len),
            vision: VisionConfig::default(),
            lm,
        }
    }
}

impl VlmConfig {
    /// A very small model for gradient checks.
    pub fn tiny() -> Self {
        let vision = VisionConfig {
            tile_size: 8,
            patch_size: 4,
            width: 4,
            heads: 2,
            max_tiles: 2,
            ..VisionConfig::default()
        };
        let lm = LmConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            mlp_ratio: 2,
            max_seq_len: 32,
            ..LmConfig::default()
        };
        Self {
            rope: RopeConfig::vanilla(lm.head_dim(), lm.max_seq_len),
            vision,
            lm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        let lm = &self.lm;
        if lm.d_model == 0 || lm.heads == 0 || lm.d_model % lm.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must split evenly into {} heads",
                lm.d_model, lm.heads
            )));
        }
        if lm.vocab_size < crate::tokenizer::VOCAB_SIZE {
            return Err(ModelError::Config(format!(
                "vocab_size {} smaller than the tokenizer's {}",
                lm.vocab_size,
                crate::tokenizer::VOCAB_SIZE
            )));
        }
        if lm.max_seq_len == 0 || lm.mlp_ratio == 0 {
            return Err(ModelError::Config("max_seq_len and mlp_ratio must be positive".into()));
        }
        if self.rope.head_dim != lm.head_dim() {
            return Err(ModelError::Config(format!(
                "rope head_dim {} differs from the decoder head_dim {}",
                self.rope.head_dim,
                lm.head_dim()
            )));
        }
        self.rope.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn production_tokens_per_tile() {
        let v = VisionConfig::production();
        v.validate().unwrap();
        assert_eq!(v.patches_per_tile(), 576);
        assert_eq!(v.tokens_per_tile(), 144);
        assert_eq!(v.max_tiles, 12);
    }

    #[test]
    fn desk_tokens_per_tile() {
        let v = VisionConfig::default();
        assert_eq!(v.patches_per_tile(), 16);
        assert_eq!(v.tokens_per_tile(), 4);
        assert_eq!(v.merged_width(), 4 * v.width);
    }

    #[test]
    fn rejects_bad_vision_geometry() {
        let v = VisionConfig {
            tile_size: 30,
            ..VisionConfig::default()
        };
        assert!(v.validate().is_err());
        let v = VisionConfig {
            downsample_ratio: 0.3,
            ..VisionConfig::default()
        };
        assert!(v.validate().is_err());
        // 336 / 14 = 24 patches per side; a 0.2 ratio needs 5 | 24
        let v = VisionConfig {
            downsample_ratio: 0.2,
            ..VisionConfig::production()
        };
        assert!(v.validate().is_err());
        let v = VisionConfig {
            max_tiles: 0,
            ..VisionConfig::default()
        };
        assert!(v.validate().is_err());
    }

    #[test]
    fn defaults_validate() {
        VlmConfig::default().validate().unwrap();
        VlmConfig::tiny().validate().unwrap();
    }
}
