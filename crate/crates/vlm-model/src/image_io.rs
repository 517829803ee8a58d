//! Image fixtures are binary portable pixmaps (`P6`, 8-bit RGB).
//!
//! A fixture directory holds one `<id>.ppm` per image; benchmark records
//! refer to images by path relative to that directory.

use std::path::Path;

use std::fs::File;
use std::io::BufWriter;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use medvlm_nn::Tensor;

use crate::error::{ModelError, Result};

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| ModelError::Image(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

pub fn save_ppm(image: &RgbImage, path: &Path) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| ModelError::Image(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| err(&e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
        .map_err(|e| err(&e))
}

/// Flatten a square crop into `[patches, patch * patch * 3]`, patches in
/// row-major order and pixels row-major within a patch, scaled to `[-1, 1]`.
pub fn crop_to_patches(crop: &RgbImage, tile_size: usize, patch_size: usize) -> Result<Tensor> {
    if crop.dimensions() != (tile_size as u32, tile_size as u32) {
        return Err(ModelError::Image(format!(
            "crop is {:?}, expected {tile_size}x{tile_size}",
            crop.dimensions()
        )));
    }
    let grid = tile_size / patch_size;
    let dim = patch_size * patch_size * 3;
    let mut data = Vec::with_capacity(grid * grid * dim);
    for pr in 0..grid {
        for pc in 0..grid {
            for y in 0..patch_size {
                for x in 0..patch_size {
                    let px = crop.get_pixel((pc * patch_size + x) as u32, (pr * patch_size + y) as u32);
                    data.extend(px.0.iter().map(|&v| f64::from(v) / 127.5 - 1.0));
                }
            }
        }
    }
    Ok(Tensor::new(vec![grid * grid, dim], data)?)
}
