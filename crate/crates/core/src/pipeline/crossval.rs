use serde::Serialize;

use super::config::ModelConfig;
use super::metrics::{evaluate, mean_report, EvalReport};
use super::model::{LossBreakdown, Sample};
use super::train::ModelState;
use crate::data::{fold_members, kfold_split};
use crate::error::Result;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Mean loss of the last training epoch.
    pub final_loss: Option<LossBreakdown>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValReport {
    pub k: usize,
    pub seed: u64,
    /// Fold id of every sample.
    pub assignment: Vec<usize>,
    pub folds: Vec<FoldReport>,
    /// Arithmetic mean over folds; confusion counts summed.
    pub mean: EvalReport,
}

/// Model seed for fold `fold`, so folds never share an initialization.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(1 + fold as u64)
}

/// Trains a fresh model on every `k - 1` folds and evaluates it on the
/// remaining one. Folds run in parallel; each owns its state.
pub fn cross_validate(samples: &[Sample], config: &ModelConfig, k: usize) -> Result<CrossValReport> {
    config.validate()?;
    let assignment = kfold_split(samples.len(), k, config.seed)?;
    let members = fold_members(&assignment, k);
    let folds = par::map_range(k, |f| -> Result<FoldReport> {
        let train: Vec<Sample> = (0..samples.len())
            .filter(|&i| assignment[i] != f)
            .map(|i| samples[i].clone())
            .collect();
        let test: Vec<Sample> = members[f].iter().map(|&i| samples[i].clone()).collect();
        let cfg = ModelConfig {
            seed: fold_seed(config.seed, f),
            ..config.clone()
        };
        let mut state = ModelState::new(&cfg)?;
        let mut last = None;
        state.train(&train, cfg.epochs, |r| last = Some(r.loss))?;
        Ok(FoldReport {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            final_loss: last,
            report: evaluate(&state.model, &test)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CrossValReport {
        k,
        seed: config.seed,
        assignment,
        mean: mean_report(&reports)?,
        folds,
    })
}
