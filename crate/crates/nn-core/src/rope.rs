//! Rotary position embeddings with YaRN context extension.
//!
//! YaRN splits the rotary dimensions by wavelength relative to the original
//! training context. Dimensions that complete many rotations inside the
//! original window keep their frequency, dimensions with wavelengths longer
//! than the window are interpolated (divided by the scale factor), and a
//! linear ramp between `beta_slow` and `beta_fast` rotations blends the two.
//! Attention logits are sharpened by `0.1 ln(s) + 1` applied to both the
//! query and key side, i.e. the softmax input is multiplied by its square.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub theta_base: f64,
    pub original_context: usize,
    pub scale_factor: f64,
    pub beta_fast: f64,
    pub beta_slow: f64,
}

impl RopeConfig {
    /// Plain RoPE with the desk-scale base of 10,000.
    pub fn vanilla(head_dim: usize, original_context: usize) -> Self {
        Self {
            head_dim,
            theta_base: 10_000.0,
            original_context,
            scale_factor: 1.0,
            beta_fast: 32.0,
            beta_slow: 1.0,
        }
    }

    /// The production long-context setting: base 150,000, factor 32,
    /// extending a 4,096-position window to 131,072.
    pub fn long_context(head_dim: usize) -> Self {
        Self {
            head_dim,
            theta_base: 150_000.0,
            original_context: 4_096,
            scale_factor: 32.0,
            beta_fast: 32.0,
            beta_slow: 1.0,
        }
    }

    /// Longest position the scaled embedding is meant to address.
    pub fn extended_context(&self) -> usize {
        (self.original_context as f64 * self.scale_factor).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(NnError::Config(format!(
                "head_dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if !(self.theta_base.is_finite() && self.theta_base > 0.0) {
            return Err(NnError::Config("theta_base must be positive".into()));
        }
        if self.original_context == 0 {
            return Err(NnError::Config("original_context must be positive".into()));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor >= 1.0) {
            return Err(NnError::Config(format!(
                "scale_factor must be >= 1, got {}",
                self.scale_factor
            )));
        }
        if !(self.beta_slow > 0.0 && self.beta_fast > self.beta_slow) {
            return Err(NnError::Config(format!(
                "need beta_fast > beta_slow > 0, got {} and {}",
                self.beta_fast, self.beta_slow
            )));
        }
        Ok(())
    }
}

/// Inverse frequencies `theta^(-2i/d)` for `i in 0..d/2`.
pub fn rope_frequencies(cfg: &RopeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let d = cfg.head_dim as f64;
    Ok((0..cfg.head_dim / 2)
        .map(|i| cfg.theta_base.powf(-2.0 * i as f64 / d))
        .collect())
}

/// Dimension index at which the rotary pair completes `rotations` full turns
/// over the original context.
fn correction_dim(rotations: f64, cfg: &RopeConfig) -> f64 {
    cfg.head_dim as f64 * (cfg.original_context as f64 / (rotations * 2.0 * PI)).ln()
        / (2.0 * cfg.theta_base.ln())
}

/// YaRN-scaled inverse frequencies and the attention temperature.
pub fn yarn_scale(cfg: &RopeConfig) -> Result<(Vec<f64>, f64)> {
    let base = rope_frequencies(cfg)?;
    let s = cfg.scale_factor;
    if s == 1.0 {
        return Ok((base, 1.0));
    }
    let half = cfg.head_dim / 2;
    let low = correction_dim(cfg.beta_fast, cfg).floor().max(0.0);
    let mut high = correction_dim(cfg.beta_slow, cfg)
        .ceil()
        .min(cfg.head_dim as f64 - 1.0);
    if high <= low {
        high = low + 0.001;
    }
    let scaled = base
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let ramp = ((i as f64 - low) / (high - low)).clamp(0.0, 1.0);
            // ramp = 0: keep the original frequency, ramp = 1: fully interpolated.
            let keep = 1.0 - ramp;
            let interpolated = f / s;
            if keep == 1.0 {
                f
            } else if keep == 0.0 {
                interpolated
            } else {
                interpolated * (1.0 - keep) + f * keep
            }
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(scaled.len(), half);
    Ok((scaled, 0.1 * s.ln() + 1.0))
}

fn check_rope_shapes(x: &Tensor, positions: &[usize], inv_freq: &[f64]) -> Result<(usize, usize)> {
    let shape = x.shape();
    let head_dim = 2 * inv_freq.len();
    if head_dim == 0 {
        return Err(NnError::Shape("empty frequency vector".into()));
    }
    let seq = x.rows();
    if positions.len() != seq {
        return Err(NnError::Shape(format!(
            "{} positions for sequence of {seq}",
            positions.len()
        )));
    }
    let width = x.row_width();
    if width % head_dim != 0 || (shape.len() == 3 && shape[2] != head_dim) {
        return Err(NnError::Shape(format!(
            "tensor shape {shape:?} incompatible with head_dim {head_dim}"
        )));
    }
    Ok((seq, width / head_dim))
}

fn rotate(x: &Tensor, positions: &[usize], inv_freq: &[f64], sign: f64) -> Result<Tensor> {
    let (seq, heads) = check_rope_shapes(x, positions, inv_freq)?;
    let half = inv_freq.len();
    let head_dim = 2 * half;
    let mut out = x.clone();
    let data = out.data_mut();
    for (t, &pos) in positions.iter().enumerate().take(seq) {
        for (i, &f) in inv_freq.iter().enumerate() {
            let angle = pos as f64 * f;
            let (sin, cos) = angle.sin_cos();
            let sin = sign * sin;
            for h in 0..heads {
                let base = t * heads * head_dim + h * head_dim + 2 * i;
                let a = data[base];
                let b = data[base + 1];
                data[base] = a * cos - b * sin;
                data[base + 1] = a * sin + b * cos;
            }
        }
    }
    Ok(out)
}

/// Rotate each `(x[2i], x[2i+1])` pair by `position * inv_freq[i]`.
///
/// Accepts `[seq, heads, head_dim]` or the flattened `[seq, heads * head_dim]`.
pub fn apply_rope(x: &Tensor, positions: &[usize], inv_freq: &[f64]) -> Result<Tensor> {
    rotate(x, positions, inv_freq, 1.0)
}

/// Vector-Jacobian product of [`apply_rope`]: the inverse rotation.
pub(crate) fn apply_rope_backward(
    grad: &Tensor,
    positions: &[usize],
    inv_freq: &[f64],
) -> Result<Tensor> {
    rotate(grad, positions, inv_freq, -1.0)
}
