//! Semantic-guided visual sequence compression.
//!
//! The visual tokens are mean-pooled into `v_cls`, added to the high-level
//! semantic `g_cls` to form an anchor, scored against that anchor, and split
//! at a threshold. Tokens below the threshold are not dropped: each is folded
//! into the kept token it is most similar to.
//!
//! The similarity matrix between the tokens and the broadcast anchor has one
//! distinct value per token, so only that per-token score vector is computed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::cosine_unchecked;
use crate::numerics::{dot, mean_pool_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VscConfig {
    /// Temperature dividing every score.
    pub tau: f64,
    /// Tokens scoring at or above this are kept.
    pub gamma: f64,
    /// Weight kept by the target row when a pruned token is merged into it.
    pub alpha: f64,
    /// Score with cosine similarity instead of the raw dot product.
    pub normalize: bool,
}

impl Default for VscConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            gamma: 0.0,
            alpha: 0.5,
            normalize: true,
        }
    }
}

impl VscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("vsc.tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("vsc.alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Config("vsc.gamma must be finite".into()));
        }
        Ok(())
    }
}

/// The pooled visual semantic, the guiding semantic, and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedAnchor {
    pub m_cls: Vec<f64>,
    pub v_cls: Vec<f64>,
    pub g_cls: Vec<f64>,
}

/// Relevant/irrelevant split of a token sequence and the merged output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// Kept token indices into the input, ascending.
    pub relevant_indices: Vec<usize>,
    /// Pruned token indices into the input, ascending.
    pub irrelevant_indices: Vec<usize>,
    /// Score of every input token.
    pub similarities: Vec<f64>,
    /// One row per kept token, after merging.
    pub merged: Matrix,
    /// `(input index, position in relevant_indices)` in application order.
    pub merge_map: Vec<(usize, usize)>,
}

impl PartitionResult {
    /// Kept tokens over input tokens.
    pub fn compression_ratio(&self) -> f64 {
        let n = self.relevant_indices.len() + self.irrelevant_indices.len();
        self.relevant_indices.len() as f64 / n as f64
    }
}

pub fn fuse_semantic(v_cls: &[f64], g_cls: &[f64]) -> Result<FusedAnchor> {
    if v_cls.len() != g_cls.len() {
        return Err(Error::shape("fuse_semantic", v_cls.len(), g_cls.len()));
    }
    Ok(FusedAnchor {
        m_cls: v_cls.iter().zip(g_cls).map(|(v, g)| v + g).collect(),
        v_cls: v_cls.to_vec(),
        g_cls: g_cls.to_vec(),
    })
}

/// One score per token: `<v_i, m_cls> / tau`, or `cos(v_i, m_cls) / tau`
/// when `cfg.normalize` is set.
pub fn score_tokens(v: &Matrix, anchor: &FusedAnchor, cfg: &VscConfig) -> Result<Vec<f64>> {
    if v.cols() != anchor.m_cls.len() {
        return Err(Error::shape("score_tokens", v.shape(), format!("anchor {}", anchor.m_cls.len())));
    }
    let m = &anchor.m_cls;
    Ok(v.row_iter()
        .map(|row| {
            let s = if cfg.normalize {
                cosine_unchecked(row, m)
            } else {
                dot(row, m)
            };
            s / cfg.tau
        })
        .collect())
}

/// Splits token indices by `scores[i] >= gamma`, keeping input order.
///
/// If nothing clears the threshold, the highest-scoring token (lowest index
/// on ties) is kept so the output is never empty.
pub fn partition(scores: &[f64], gamma: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut relevant, mut irrelevant): (Vec<usize>, Vec<usize>) =
        (0..scores.len()).partition(|&i| scores[i] >= gamma);
    if relevant.is_empty() && !scores.is_empty() {
        let best = (1..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        irrelevant.retain(|&i| i != best);
        relevant.push(best);
    }
    (relevant, irrelevant)
}

fn blend(target: &mut [f64], source: &[f64], alpha: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
}

/// Folds each irrelevant row, in order, into the currently most similar
/// relevant row (largest dot product, lowest position on ties):
/// `z_r[j] <- alpha * z_r[j] + (1 - alpha) * z_lr[i]`.
///
/// Merges are sequential, so later rows see earlier updates. The returned map
/// holds `(row of z_lr, position in z_r)` pairs.
pub fn merge_irrelevant(
    z_r: &Matrix,
    z_lr: &[&[f64]],
    alpha: f64,
) -> Result<(Matrix, Vec<(usize, usize)>)> {
    let mut merged = z_r.clone();
    let mut map = Vec::with_capacity(z_lr.len());
    for (i, row) in z_lr.iter().enumerate() {
        if row.len() != merged.cols() {
            return Err(Error::shape("merge_irrelevant", merged.shape(), format!("row {}", row.len())));
        }
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..merged.rows() {
            let s = dot(row, merged.row(j));
            if s > best_sim {
                best_sim = s;
                best = j;
            }
        }
        blend(merged.row_mut(best), row, alpha);
        map.push((i, best));
    }
    Ok((merged, map))
}

/// Full compression of `v` (N×d) guided by `g_cls` (d).
pub fn compress(v: &Matrix, g_cls: &[f64], cfg: &VscConfig) -> Result<PartitionResult> {
    let v_cls = mean_pool_rows(v);
    let anchor = fuse_semantic(&v_cls, g_cls)?;
    let similarities = score_tokens(v, &anchor, cfg)?;
    let (relevant_indices, irrelevant_indices) = partition(&similarities, cfg.gamma);
    let z_r = v.select_rows(&relevant_indices)?;
    let z_lr: Vec<&[f64]> = irrelevant_indices.iter().map(|&i| v.row(i)).collect();
    let (merged, local_map) = merge_irrelevant(&z_r, &z_lr, cfg.alpha)?;
    let merge_map = local_map
        .into_iter()
        .map(|(i, j)| (irrelevant_indices[i], j))
        .collect();
    Ok(PartitionResult {
        relevant_indices,
        irrelevant_indices,
        similarities,
        merged,
        merge_map,
    })
}

/// Rebuilds the merged rows from the raw input using only the recorded
/// partition and merge map.
pub fn replay_merges(
    v: &Matrix,
    relevant_indices: &[usize],
    merge_map: &[(usize, usize)],
    alpha: f64,
) -> Result<Matrix> {
    let mut merged = v.select_rows(relevant_indices)?;
    for &(i, j) in merge_map {
        if i >= v.rows() || j >= merged.rows() {
            return Err(Error::Index {
                what: "merge_map entry",
                index: i.max(j),
                len: v.rows(),
            });
        }
        blend(merged.row_mut(j), v.row(i), alpha);
    }
    Ok(merged)
}

/// Gradient of the merged rows with respect to the input tokens, holding the
/// partition and merge routing fixed.
pub fn compress_backward(result: &PartitionResult, alpha: f64, upstream: &Matrix) -> Result<Matrix> {
    if upstream.shape() != result.merged.shape() {
        return Err(Error::shape("compress_backward", result.merged.shape(), upstream.shape()));
    }
    let n = result.similarities.len();
    let mut grad_rows = upstream.clone();
    let mut dv = Matrix::zeros(n, upstream.cols());
    for &(i, j) in result.merge_map.iter().rev() {
        let g = grad_rows.row_mut(j);
        for (d, gv) in dv.row_mut(i).iter_mut().zip(g.iter()) {
            *d += (1.0 - alpha) * gv;
        }
        g.iter_mut().for_each(|v| *v *= alpha);
    }
    for (pos, &r) in result.relevant_indices.iter().enumerate() {
        for (d, gv) in dv.row_mut(r).iter_mut().zip(grad_rows.row(pos)) {
            *d += gv;
        }
    }
    Ok(dv)
}

/// Threshold that best separates labelled token scores: the midpoint of
/// the score gap where the fewest tokens land on the wrong side
/// (`is_noise[i]` tokens at or above it, or others below it). Ties go to
/// the lowest threshold.
pub fn calibrate_gamma(scores: &[f64], is_noise: &[bool]) -> Result<f64> {
    if scores.len() != is_noise.len() {
        return Err(Error::shape("calibrate_gamma", scores.len(), is_noise.len()));
    }
    if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("calibration needs finite scores".into()));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(is_noise.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    // errors when everything is kept: every noise token
    let mut errors = pairs.iter().filter(|p| p.1).count();
    let mut best = (errors, pairs[0].0);
    for k in 1..=n {
        // move token k-1 below the threshold
        if pairs[k - 1].1 {
            errors -= 1;
        } else {
            errors += 1;
        }
        let gap_ok = k == n || pairs[k - 1].0 < pairs[k].0;
        if gap_ok && errors < best.0 {
            let gamma = if k == n {
                pairs[n - 1].0 + 1.0
            } else {
                0.5 * (pairs[k - 1].0 + pairs[k].0)
            };
            best = (errors, gamma);
        }
    }
    Ok(best.1)
}
