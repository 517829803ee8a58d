use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub(crate) struct CrossEntropyForward {
    pub loss: f64,
    /// Row-wise softmax of the logits.
    pub probs: Vec<f64>,
    pub counted: usize,
}

pub(crate) fn cross_entropy_forward(
    logits: &Tensor,
    targets: &[Option<usize>],
) -> Result<CrossEntropyForward> {
    if logits.shape().len() != 2 {
        return Err(NnError::Shape(format!(
            "logits must be [seq, vocab], got {:?}",
            logits.shape()
        )));
    }
    let (seq, vocab) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != seq {
        return Err(NnError::Shape(format!(
            "{} targets for {seq} positions",
            targets.len()
        )));
    }
    let mut probs = vec![0.0; seq * vocab];
    let mut total = 0.0;
    let mut counted = 0;
    for (t, target) in targets.iter().enumerate() {
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        for (p, x) in probs[t * vocab..(t + 1) * vocab].iter_mut().zip(row) {
            *p = (x - log_z).exp();
        }
        if let Some(target) = *target {
            if target >= vocab {
                return Err(NnError::InvalidArgument(format!(
                    "target {target} outside vocabulary of {vocab}"
                )));
            }
            total += log_z - row[target];
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(NnError::InvalidArgument(
            "every position is ignored; mean loss undefined".into(),
        ));
    }
    Ok(CrossEntropyForward {
        loss: total / counted as f64,
        probs,
        counted,
    })
}

/// Mean next-token negative log-likelihood over non-ignored positions.
///
/// `targets[t] == Some(ignore_index)` is skipped like `None`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore_index: usize) -> Result<f64> {
    let targets: Vec<Option<usize>> = targets
        .iter()
        .map(|&t| (t != ignore_index).then_some(t))
        .collect();
    Ok(cross_entropy_forward(logits, &targets)?.loss)
}

pub(crate) fn cross_entropy_backward(
    grad_loss: f64,
    probs: &[f64],
    targets: &[Option<usize>],
    vocab: usize,
    counted: usize,
) -> Vec<f64> {
    let mut grad = vec![0.0; probs.len()];
    let scale = grad_loss / counted as f64;
    for (t, target) in targets.iter().enumerate() {
        if let Some(target) = *target {
            let row = &mut grad[t * vocab..(t + 1) * vocab];
            for (g, p) in row.iter_mut().zip(&probs[t * vocab..(t + 1) * vocab]) {
                *g = p * scale;
            }
            row[target] -= scale;
        }
    }
    grad
}
