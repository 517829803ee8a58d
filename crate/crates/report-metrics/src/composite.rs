//! Lower-is-better composite and its corpus aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Weights for `w0 + w1·(1 − graph_f1) + w2·(1 − bleu)`. The defaults are
/// placeholders, not published coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeConfig {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self { w0: 0.0, w1: 1.0, w2: 1.0 }
    }
}

pub fn radcliq_composite(graph_f1: f64, bleu: f64, cfg: &CompositeConfig) -> f64 {
    cfg.w0 + cfg.w1 * (1.0 - graph_f1) + cfg.w2 * (1.0 - bleu)
}

/// `1 / mean(scores)`; not the mean of reciprocals.
pub fn reciprocal_mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(MetricError::Invalid("reciprocal mean of no scores".into()));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(MetricError::Invalid(format!("mean score {mean} is not positive")));
    }
    Ok(1.0 / mean)
}
