//! Label-masked cross-modal contrastive loss.
//!
//! Anchors are fused text+audio projections, targets are video projections.
//! For anchor `i` the positive is its own target `i`; negatives are the
//! targets whose label differs from `labels[i]`. Targets sharing the label
//! (other than `i` itself) are excluded from the row entirely. With
//! `s_ij = cos(anchor_i, target_j) / tau`:
//!
//! ```text
//! row_i = -ln( e^{s_ii} / (e^{s_ii} + sum_{j in neg(i)} e^{s_ij}) )
//! L     = sum_i row_i / (B (B - 1))
//! ```
//!
//! Rows are evaluated as `ln(1 + sum_j e^{s_ij - s_ii})`, which is exactly
//! zero when a row has no negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::cosine_unchecked;
use crate::numerics::{cosine_grad, relu, relu_backward, LinearGrads, LinearLayer, Matrix};

/// A batch of paired cross-modal embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub anchor: Matrix,
    pub target: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(anchor: Matrix, target: Matrix, labels: Vec<usize>) -> Result<Self> {
        if anchor.shape() != target.shape() {
            return Err(Error::shape("contrastive batch", anchor.shape(), target.shape()));
        }
        if labels.len() != anchor.rows() {
            return Err(Error::shape("contrastive batch", anchor.shape(), format!("{} labels", labels.len())));
        }
        Ok(Self { anchor, target, labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

/// Same-label (`positive`) and different-label (`negative`) pair masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPair {
    pub positive: Vec<Vec<bool>>,
    pub negative: Vec<Vec<bool>>,
}

pub fn build_masks(labels: &[usize]) -> MaskPair {
    let positive: Vec<Vec<bool>> = labels
        .iter()
        .map(|a| labels.iter().map(|b| a == b).collect())
        .collect();
    let negative = positive
        .iter()
        .map(|row| row.iter().map(|p| !p).collect())
        .collect();
    MaskPair { positive, negative }
}

/// Temperature-scaled cosine similarities `cos(anchor_i, target_j) / tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub sims: Matrix,
    pub tau: f64,
}

/// Gradients of the loss with respect to both embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrads {
    pub anchor: Matrix,
    pub target: Matrix,
}

fn check_batch(batch: &Batch, tau: f64) -> Result<()> {
    if batch.size() < 2 {
        return Err(Error::Input(format!(
            "contrastive loss needs a batch of at least 2, got {}",
            batch.size()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("contrastive tau must be > 0, got {tau}")));
    }
    Ok(())
}

fn similarity_grid(batch: &Batch, tau: f64) -> SimilarityGrid {
    let b = batch.size();
    let sims = Matrix::from_fn(b, b, |i, j| {
        cosine_unchecked(batch.anchor.row(i), batch.target.row(j)) / tau
    });
    SimilarityGrid { sims, tau }
}

/// Loss value and the similarity grid it was computed from.
pub fn contrastive_loss(batch: &Batch, tau: f64) -> Result<(f64, SimilarityGrid)> {
    check_batch(batch, tau)?;
    let grid = similarity_grid(batch, tau);
    let masks = build_masks(&batch.labels);
    let b = batch.size();
    let mut total = 0.0;
    for i in 0..b {
        let s_ii = grid.sims.get(i, i);
        let ratio: f64 = (0..b)
            .filter(|&j| masks.negative[i][j])
            .map(|j| (grid.sims.get(i, j) - s_ii).exp())
            .sum();
        total += ratio.ln_1p();
    }
    Ok((total / (b * (b - 1)) as f64, grid))
}

/// Derivative of the loss with respect to every entry of the similarity grid.
///
/// The diagonal entries are `-r_i / (1 + r_i)` and negative-pair entries
/// `e^{s_ij - s_ii} / (1 + r_i)`, both scaled by `1 / (B (B - 1))`, where
/// `r_i = sum_{neg} e^{s_ij - s_ii}`. Excluded pairs get 0.
pub fn similarity_grad(batch: &Batch, tau: f64) -> Result<Matrix> {
    check_batch(batch, tau)?;
    let grid = similarity_grid(batch, tau);
    Ok(similarity_grad_from_grid(&grid, &batch.labels))
}

fn similarity_grad_from_grid(grid: &SimilarityGrid, labels: &[usize]) -> Matrix {
    let b = labels.len();
    let norm = 1.0 / (b * (b - 1)) as f64;
    let masks = build_masks(labels);
    let mut ds = Matrix::zeros(b, b);
    for i in 0..b {
        let s_ii = grid.sims.get(i, i);
        let ratios: Vec<(usize, f64)> = (0..b)
            .filter(|&j| masks.negative[i][j])
            .map(|j| (j, (grid.sims.get(i, j) - s_ii).exp()))
            .collect();
        let r: f64 = ratios.iter().map(|(_, e)| e).sum();
        let denom = 1.0 + r;
        ds.set(i, i, -norm * r / denom);
        for (j, e) in ratios {
            ds.set(i, j, norm * e / denom);
        }
    }
    ds
}

/// Analytic gradient of [`contrastive_loss`] with respect to the anchor and
/// target matrices.
pub fn contrastive_grad(batch: &Batch, tau: f64) -> Result<ContrastiveGrads> {
    Ok(contrastive_loss_and_grad(batch, tau)?.1)
}

/// Loss and gradients in one pass.
pub fn contrastive_loss_and_grad(batch: &Batch, tau: f64) -> Result<(f64, ContrastiveGrads)> {
    let (loss, grid) = contrastive_loss(batch, tau)?;
    let ds = similarity_grad_from_grid(&grid, &batch.labels);
    let (b, p) = (batch.size(), batch.anchor.cols());
    let mut anchor = Matrix::zeros(b, p);
    let mut target = Matrix::zeros(b, p);
    for i in 0..b {
        for j in 0..b {
            let g = ds.get(i, j);
            if g == 0.0 {
                continue;
            }
            let (ga, gt) = cosine_grad(batch.anchor.row(i), batch.target.row(j));
            let scale = g / tau;
            for (dst, v) in anchor.row_mut(i).iter_mut().zip(&ga) {
                *dst += scale * v;
            }
            for (dst, v) in target.row_mut(j).iter_mut().zip(&gt) {
                *dst += scale * v;
            }
        }
    }
    Ok((loss, ContrastiveGrads { anchor, target }))
}

/// Linear map followed by a rectifier, applied row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub linear: LinearLayer,
}

/// Per-row forward values needed by [`ProjectionHead::backward`].
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(linear: LinearLayer) -> Self {
        Self { linear }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn forward_row(&self, x: &[f64]) -> Result<(Vec<f64>, ProjectionCache)> {
        let z = self.linear.apply(x)?;
        Ok((
            relu(&z),
            ProjectionCache {
                input: x.to_vec(),
                pre_activation: z,
            },
        ))
    }

    pub fn backward(&self, cache: &ProjectionCache, upstream: &[f64]) -> Result<LinearGrads> {
        let dz = relu_backward(&cache.pre_activation, upstream);
        self.linear.grads(&cache.input, &dz)
    }
}

/// Projects each row of `features` through `head`.
pub fn project(features: &Matrix, head: &ProjectionHead) -> Result<Matrix> {
    if features.cols() != head.input_dim() {
        return Err(Error::shape(
            "project",
            features.shape(),
            format!("head input {}", head.input_dim()),
        ));
    }
    let rows = features
        .row_iter()
        .map(|r| head.forward_row(r).map(|(y, _)| y))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}
