//! Aspect-matched dynamic tiling.
//!
//! Grid choice, for an image of `w x h` and at most `max_tiles` tiles:
//!
//! 1. minimize `|ln((cols / rows) / (w / h))|`, compared exactly in integers;
//! 2. then prefer a tile count closest to `ceil(w * h / tile_size^2)`;
//! 3. then the smaller tile count;
//! 4. then fewer rows.

use std::cmp::Ordering;

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::VisionConfig;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub has_thumbnail: bool,
    /// `(width, height)` the image is resized to before cutting tiles.
    pub resized_dims: (u32, u32),
}

impl TilingPlan {
    pub fn tile_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Tiles plus the thumbnail, if any.
    pub fn crop_count(&self) -> usize {
        self.tile_count() + usize::from(self.has_thumbnail)
    }
}

/// Aspect error of a grid as the exact fraction `max(a, b) / min(a, b)` with
/// `a = cols * h` and `b = rows * w`; ordering these orders `|ln(a / b)|`.
fn aspect_error(rows: usize, cols: usize, width: u64, height: u64) -> (u128, u128) {
    let a = cols as u128 * height as u128;
    let b = rows as u128 * width as u128;
    (a.max(b), a.min(b))
}

fn cmp_fraction(x: (u128, u128), y: (u128, u128)) -> Ordering {
    (x.0 * y.1).cmp(&(y.0 * x.1))
}

pub fn plan_tiling(width: u32, height: u32, cfg: &VisionConfig) -> Result<TilingPlan> {
    if width == 0 || height == 0 {
        return Err(ModelError::Image(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    cfg.validate()?;
    let (w, h) = (u64::from(width), u64::from(height));
    let area_tiles = (w * h).div_ceil((cfg.tile_size * cfg.tile_size) as u64) as usize;
    let mut best: Option<(usize, usize)> = None;
    for rows in 1..=cfg.max_tiles {
        for cols in 1..=cfg.max_tiles / rows {
            let better = match best {
                None => true,
                Some((br, bc)) => {
                    let by_aspect =
                        cmp_fraction(aspect_error(rows, cols, w, h), aspect_error(br, bc, w, h));
                    let count = rows * cols;
                    let best_count = br * bc;
                    by_aspect
                        .then(count.abs_diff(area_tiles).cmp(&best_count.abs_diff(area_tiles)))
                        .then(count.cmp(&best_count))
                        .then(rows.cmp(&br))
                        == Ordering::Less
                }
            };
            if better {
                best = Some((rows, cols));
            }
        }
    }
    let (grid_rows, grid_cols) = best.expect("max_tiles >= 1");
    Ok(TilingPlan {
        grid_rows,
        grid_cols,
        has_thumbnail: cfg.include_thumbnail && grid_rows * grid_cols > 1,
        resized_dims: (
            (grid_cols * cfg.tile_size) as u32,
            (grid_rows * cfg.tile_size) as u32,
        ),
    })
}

fn resize(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    imageops::resize(image, width, height, FilterType::Triangle)
}

/// Cut an image into `tile_size` squares: row-major tiles, then the
/// thumbnail (first instead when `thumbnail_first` is set).
pub fn tile_image(image: &RgbImage, plan: &TilingPlan, cfg: &VisionConfig) -> Result<Vec<RgbImage>> {
    let t = cfg.tile_size as u32;
    let expected = (plan.grid_cols as u32 * t, plan.grid_rows as u32 * t);
    if plan.resized_dims != expected
        || plan.tile_count() > cfg.max_tiles
        || plan.tile_count() == 0
        || (plan.has_thumbnail && !cfg.include_thumbnail)
    {
        return Err(ModelError::Image(format!(
            "plan {plan:?} does not match tile size {t} / max tiles {}",
            cfg.max_tiles
        )));
    }
    let resized = resize(image, expected.0, expected.1);
    let mut crops = Vec::with_capacity(plan.crop_count());
    for r in 0..plan.grid_rows as u32 {
        for c in 0..plan.grid_cols as u32 {
            crops.push(imageops::crop_imm(&resized, c * t, r * t, t, t).to_image());
        }
    }
    if plan.has_thumbnail {
        let thumb = resize(image, t, t);
        if cfg.thumbnail_first {
            crops.insert(0, thumb);
        } else {
            crops.push(thumb);
        }
    }
    Ok(crops)
}
