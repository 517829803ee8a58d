use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Layout of a `[seq, heads, head_dim]` tensor, also accepted flattened as
/// `[seq, heads * head_dim]` with an explicit head count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl HeadLayout {
    fn index(&self, t: usize, h: usize, j: usize) -> usize {
        (t * self.heads + h) * self.head_dim + j
    }
}

fn layout_of(q: &Tensor, k: &Tensor, v: &Tensor, heads: Option<usize>) -> Result<HeadLayout> {
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(NnError::Shape(format!(
            "q {:?}, k {:?}, v {:?} must match",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let shape = q.shape();
    let (heads, head_dim) = match (shape.len(), heads) {
        (3, _) => (shape[1], shape[2]),
        (2, Some(h)) if h > 0 && shape[1] % h == 0 => (h, shape[1] / h),
        _ => {
            return Err(NnError::Shape(format!(
                "cannot split {shape:?} into heads"
            )))
        }
    };
    if shape[0] == 0 || head_dim == 0 {
        return Err(NnError::Shape(format!("empty attention input {shape:?}")));
    }
    Ok(HeadLayout {
        seq: shape[0],
        heads,
        head_dim,
    })
}

/// Attention probabilities `[heads, seq, seq]`, stored row-major.
pub(crate) struct AttentionForward {
    pub output: Tensor,
    pub probs: Vec<f64>,
    pub layout: HeadLayout,
}

pub(crate) fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: Option<usize>,
    causal: bool,
    temperature: f64,
) -> Result<AttentionForward> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(NnError::InvalidArgument(format!(
            "attention temperature must be positive, got {temperature}"
        )));
    }
    let l = layout_of(q, k, v, heads)?;
    let scale = temperature / (l.head_dim as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut probs = vec![0.0; l.heads * l.seq * l.seq];
    let mut out = vec![0.0; q.len()];
    let mut scores = vec![0.0; l.seq];
    for h in 0..l.heads {
        for t in 0..l.seq {
            let visible = if causal { t + 1 } else { l.seq };
            let mut max = f64::NEG_INFINITY;
            for (s, score) in scores.iter_mut().enumerate().take(visible) {
                let mut dot = 0.0;
                for j in 0..l.head_dim {
                    dot += qd[l.index(t, h, j)] * kd[l.index(s, h, j)];
                }
                *score = dot * scale;
                max = max.max(*score);
            }
            let mut sum = 0.0;
            for score in scores.iter_mut().take(visible) {
                *score = (*score - max).exp();
                sum += *score;
            }
            let row = &mut probs[(h * l.seq + t) * l.seq..(h * l.seq + t + 1) * l.seq];
            for s in 0..visible {
                row[s] = scores[s] / sum;
            }
            for s in 0..visible {
                let p = row[s];
                for j in 0..l.head_dim {
                    out[l.index(t, h, j)] += p * vd[l.index(s, h, j)];
                }
            }
        }
    }
    Ok(AttentionForward {
        output: Tensor::new(q.shape().to_vec(), out)?,
        probs,
        layout: l,
    })
}

/// `softmax(temperature * q k^T / sqrt(head_dim) + mask) v`, per head.
///
/// Inputs are `[seq, heads, head_dim]`. With `causal` set, position `t`
/// attends to positions `0..=t` only.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool, temperature: f64) -> Result<Tensor> {
    Ok(attention_forward(q, k, v, None, causal, temperature)?.output)
}

/// Attention weights `[heads, seq, seq]` for inspection.
pub fn attention_weights(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    causal: bool,
    temperature: f64,
) -> Result<Tensor> {
    let fwd = attention_forward(q, k, v, None, causal, temperature)?;
    let l = fwd.layout;
    Tensor::new(vec![l.heads, l.seq, l.seq], fwd.probs)
}

pub(crate) struct AttentionGrads {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
}

pub(crate) fn attention_backward(
    grad_out: &Tensor,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[f64],
    layout: HeadLayout,
    temperature: f64,
) -> Result<AttentionGrads> {
    let l = layout;
    let scale = temperature / (l.head_dim as f64).sqrt();
    let (qd, kd, vd, go) = (q.data(), k.data(), v.data(), grad_out.data());
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; l.seq];
    for h in 0..l.heads {
        for t in 0..l.seq {
            let row = &probs[(h * l.seq + t) * l.seq..(h * l.seq + t + 1) * l.seq];
            // dP = dO v^T and dV += P^T dO
            let mut weighted = 0.0;
            for s in 0..l.seq {
                let p = row[s];
                let mut acc = 0.0;
                for j in 0..l.head_dim {
                    let g = go[l.index(t, h, j)];
                    acc += g * vd[l.index(s, h, j)];
                    dv[l.index(s, h, j)] += p * g;
                }
                dp[s] = acc;
                weighted += p * acc;
            }
            // softmax Jacobian: dS = P * (dP - sum(P dP))
            for s in 0..l.seq {
                let ds = row[s] * (dp[s] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for j in 0..l.head_dim {
                    dq[l.index(t, h, j)] += ds * kd[l.index(s, h, j)];
                    dk[l.index(s, h, j)] += ds * qd[l.index(t, h, j)];
                }
            }
        }
    }
    let shape = q.shape().to_vec();
    Ok(AttentionGrads {
        dq: Tensor::new(shape.clone(), dq)?,
        dk: Tensor::new(shape.clone(), dk)?,
        dv: Tensor::new(shape, dv)?,
    })
}
