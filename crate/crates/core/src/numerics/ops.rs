//! Vector kernels: normalization, similarity, pooling, softmax and
//! cross-entropy, each with the backward pass the training loop needs.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Smallest probability fed to `ln` in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Scales every row to unit Euclidean norm. Rows with norm below `epsilon`
/// are copied unchanged.
pub fn l2_normalize_rows(m: &Matrix, epsilon: f64) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n >= epsilon {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Cosine of the angle between `x` and `y`; 0 if either has zero norm.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("cosine_similarity", x.len(), y.len()));
    }
    Ok(cosine_unchecked(x, y))
}

pub(crate) fn cosine_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0)
}

/// Partial derivatives of `cos(x, y)` with respect to `x` and `y`.
///
/// Zero-norm inputs give zero gradients, consistent with the forward value
/// being pinned at 0 there.
pub fn cosine_grad(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let c = dot(x, y) / (nx * ny);
    let inv = 1.0 / (nx * ny);
    let gx = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi * inv - c * xi / (nx * nx))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| xi * inv - c * yi / (ny * ny))
        .collect();
    (gx, gy)
}

/// Column-wise mean of the rows.
pub fn mean_pool_rows(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln(max(p[y], 1e-12))`.
pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    let py = *p.get(y).ok_or(Error::Index {
        what: "class",
        index: y,
        len: p.len(),
    })?;
    Ok(-py.max(PROB_FLOOR).ln())
}

/// Cross-entropy of `softmax(logits)` against class `y`, together with the
/// gradient with respect to the logits (`softmax - onehot`).
pub fn softmax_cross_entropy(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    let p = softmax(logits);
    let loss = cross_entropy(&p, y)?;
    let mut grad = p;
    grad[y] -= 1.0;
    Ok((loss, grad))
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Masks `upstream` by the rectifier's derivative at pre-activation `z`.
pub fn relu_backward(z: &[f64], upstream: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(upstream)
        .map(|(z, g)| if *z > 0.0 { *g } else { 0.0 })
        .collect()
}

/// Per-vector layer normalization with learnable gain and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    pub epsilon: f64,
}

/// Values kept from a [`LayerNorm`] forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Vec<f64>,
    inv_std: f64,
}

/// Gradients of a [`LayerNorm`] application.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormGrads {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    pub input: Vec<f64>,
}

impl LayerNorm {
    /// Unit gain, zero shift.
    pub fn new(dim: usize, epsilon: f64) -> Self {
        Self {
            gain: vec![1.0; dim],
            shift: vec![0.0; dim],
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LayerNormCache)> {
        if x.len() != self.dim() {
            return Err(Error::shape("layer_norm", x.len(), self.dim()));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.epsilon).sqrt();
        let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let y = normalized
            .iter()
            .zip(self.gain.iter().zip(&self.shift))
            .map(|(h, (g, b))| g * h + b)
            .collect();
        Ok((y, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache, upstream: &[f64]) -> LayerNormGrads {
        let n = upstream.len() as f64;
        let shift = upstream.to_vec();
        let gain: Vec<f64> = upstream
            .iter()
            .zip(&cache.normalized)
            .map(|(g, h)| g * h)
            .collect();
        let dh: Vec<f64> = upstream.iter().zip(&self.gain).map(|(g, w)| g * w).collect();
        let mean_dh = dh.iter().sum::<f64>() / n;
        let mean_dh_h = dot(&dh, &cache.normalized) / n;
        let input = dh
            .iter()
            .zip(&cache.normalized)
            .map(|(d, h)| cache.inv_std * (d - mean_dh - h * mean_dh_h))
            .collect();
        LayerNormGrads { gain, shift, input }
    }
}

/// Functional form of [`LayerNorm::forward`].
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if gain.len() != x.len() || shift.len() != x.len() {
        return Err(Error::shape(
            "layer_norm",
            x.len(),
            format!("gain {} / shift {}", gain.len(), shift.len()),
        ));
    }
    let ln = LayerNorm {
        gain: gain.to_vec(),
        shift: shift.to_vec(),
        epsilon,
    };
    Ok(ln.forward(x)?.0)
}
