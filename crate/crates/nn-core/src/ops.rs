//! Forward kernels for the elementwise and dense operations, with the
//! matching vector-Jacobian products used by the tape.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

fn matrix_dims(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(format!("{name} must be a matrix, got {s:?}")),
    }
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "lhs")?;
    let (k2, n) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return shape_err(format!("matmul inner dims {k} and {k2}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a^T b` for `a: [k, m]`, `b: [k, n]`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = matrix_dims(a, "lhs")?;
    let (k2, n) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return shape_err(format!("matmul_tn inner dims {k} and {k2}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &x) in ad[p * m..(p + 1) * m].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a b^T` for `a: [m, k]`, `b: [n, k]`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "lhs")?;
    let (n, k2) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return shape_err(format!("matmul_nt inner dims {k} and {k2}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = arow.iter().zip(&bd[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gaussian error linear unit, `x * Phi(x)`, with the exact error function.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub(crate) struct LayerNormForward {
    pub output: Tensor,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<LayerNormForward> {
    let (n, d) = matrix_dims(x, "layer_norm input")?;
    if gain.len() != d || bias.len() != d {
        return shape_err(format!(
            "layer_norm width {d} vs gain {} / bias {}",
            gain.len(),
            bias.len()
        ));
    }
    let mut out = vec![0.0; n * d];
    let mut normalized = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = r;
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            normalized[i * d + j] = xh;
            out[i * d + j] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(LayerNormForward {
        output: Tensor::new(vec![n, d], out)?,
        normalized,
        inv_std,
    })
}

/// Row-wise layer normalization with learned gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(layer_norm_forward(x, gain, bias)?.output)
}

pub(crate) fn layer_norm_backward(
    grad: &Tensor,
    gain: &Tensor,
    normalized: &[f64],
    inv_std: &[f64],
) -> (Tensor, Tensor, Tensor) {
    let (n, d) = (grad.rows(), grad.row_width());
    let mut dx = vec![0.0; n * d];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dxh = vec![0.0; d];
    for i in 0..n {
        let g = grad.row(i);
        let xh = &normalized[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += g[j] * xh[j];
            db[j] += g[j];
            dxh[j] = g[j] * gain.data()[j];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[i * d + j] = inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    (
        Tensor::new(vec![n, d], dx).expect("shape"),
        Tensor::new(vec![d], dg).expect("shape"),
        Tensor::new(vec![d], db).expect("shape"),
    )
}

/// Index map for a `factor x factor` space-to-depth merge of a row-major
/// `grid x grid` token layout: output token `o`, channel block `c` reads
/// input token `map[o * factor^2 + c]`.
pub(crate) fn space_to_depth_map(grid: usize, factor: usize) -> Result<Vec<usize>> {
    if factor == 0 || grid % factor != 0 {
        return Err(NnError::Shape(format!(
            "grid {grid} is not divisible by merge factor {factor}"
        )));
    }
    let out_grid = grid / factor;
    let mut map = Vec::with_capacity(grid * grid);
    for r in 0..out_grid {
        for c in 0..out_grid {
            for dr in 0..factor {
                for dc in 0..factor {
                    map.push((r * factor + dr) * grid + c * factor + dc);
                }
            }
        }
    }
    Ok(map)
}

/// Merge each `factor x factor` neighbourhood of a square token grid into a
/// single token by channel concatenation: `[g*g, c] -> [(g/f)^2, f*f*c]`.
pub fn space_to_depth(x: &Tensor, grid: usize, factor: usize) -> Result<Tensor> {
    let (n, c) = matrix_dims(x, "space_to_depth input")?;
    if n != grid * grid {
        return shape_err(format!("{n} tokens do not form a {grid}x{grid} grid"));
    }
    let map = space_to_depth_map(grid, factor)?;
    let mut out = Vec::with_capacity(n * c);
    for &src in &map {
        out.extend_from_slice(x.row(src));
    }
    let out_tokens = n / (factor * factor);
    Tensor::new(vec![out_tokens, factor * factor * c], out)
}
