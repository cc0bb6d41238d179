use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{AdamConfig, ModelConfig};
use super::model::{LossBreakdown, Model, Sample};
use crate::error::{Error, Result};

/// First and second moment estimates, one vector per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
        }
    }

    /// Applies update number `t` (1-based) with bias-corrected moments.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], t: u64, cfg: &AdamConfig) {
        let c1 = 1.0 - cfg.beta1.powf(t as f64);
        let c2 = 1.0 - cfg.beta2.powf(t as f64);
        for (((p, g), m), v) in model.blocks_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Parameters, optimizer moments and counters of a training run.
///
/// The shuffle order of epoch `e` is a pure function of `(config.seed, e)`,
/// so the epoch counter is all the RNG state a run needs to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub model: Model,
    pub adam: Adam,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub step: u64,
    pub batches: usize,
    pub loss: LossBreakdown,
}

/// Splits `0..n` into consecutive batch ranges. A trailing batch of one is
/// folded into the previous batch when the contrastive term needs pairs.
pub fn batch_ranges(n: usize, batch_size: usize, need_pairs: bool) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(n)).collect();
    if need_pairs && out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

impl ModelState {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let model = Model::init(config)?;
        let adam = Adam::new(&model);
        Ok(Self {
            model,
            adam,
            step: 0,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    fn shuffle_order(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config().seed);
        rng.set_stream(self.epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `samples` in seeded shuffled mini-batches.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<EpochReport> {
        let cfg = self.config().clone();
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::Input("no samples to train on".into()));
        }
        let need_pairs = cfg.beta_cl > 0.0;
        if need_pairs && samples.len() < 2 {
            return Err(Error::Config(
                "contrastive loss needs at least 2 training samples".into(),
            ));
        }
        let order = self.shuffle_order(samples.len());
        let ranges = batch_ranges(samples.len(), cfg.batch_size, need_pairs);
        let (mut ce, mut cl) = (0.0, 0.0);
        for r in &ranges {
            let batch: Vec<&Sample> = order[r.clone()].iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = self.model.batch_loss_and_grads(&batch)?;
            self.step += 1;
            self.adam.step(&mut self.model, &grads, self.step, &cfg.optimizer);
            ce += loss.l_ce * batch.len() as f64;
            cl += loss.l_cl * batch.len() as f64;
        }
        self.epoch += 1;
        let n = samples.len() as f64;
        Ok(EpochReport {
            epoch: self.epoch,
            step: self.step,
            batches: ranges.len(),
            loss: LossBreakdown::new(ce / n, cl / n, cfg.alpha_ce, cfg.beta_cl),
        })
    }

    /// Runs `epochs` more epochs, reporting each one to `on_epoch`.
    pub fn train(&mut self, samples: &[Sample], epochs: usize, mut on_epoch: impl FnMut(&EpochReport)) -> Result<()> {
        for _ in 0..epochs {
            let r = self.train_epoch(samples)?;
            on_epoch(&r);
        }
        Ok(())
    }
}

/// Fresh state trained for `config.epochs` epochs.
pub fn fit(config: &ModelConfig, samples: &[Sample]) -> Result<ModelState> {
    let mut state = ModelState::new(config)?;
    state.train(samples, config.epochs, |_| {})?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::pipeline::model::prepare_samples;

    fn toy(classes: usize, per_class: usize, seed: u64) -> (ModelConfig, Vec<Sample>) {
        let spec = SyntheticSpec {
            classes,
            samples_per_class: per_class,
            text_dim: 6,
            audio_dim: 6,
            frame_dim: 6,
            frames: 15,
            separation: 3.0,
            noise: 0.5,
            seed,
            ..SyntheticSpec::default()
        };
        let cfg = ModelConfig {
            text_dim: 6,
            audio_dim: 6,
            visual_dim: 6,
            projection_dim: 4,
            classes,
            batch_size: 8,
            seed,
            ..ModelConfig::default()
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let samples = prepare_samples(&data, &cfg).unwrap();
        (cfg, samples)
    }

    #[test]
    fn batch_ranges_cover_everything() {
        assert_eq!(batch_ranges(10, 4, false), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4, true), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(9, 4, false), vec![0..4, 4..8, 8..9]);
        assert_eq!(batch_ranges(3, 8, true), vec![0..3]);
        for n in 1..40 {
            for b in 1..10 {
                let r = batch_ranges(n, b, true);
                assert_eq!(r.first().unwrap().start, 0);
                assert_eq!(r.last().unwrap().end, n);
                assert!(r.windows(2).all(|w| w[0].end == w[1].start));
                if n >= 2 && b >= 2 {
                    assert!(r.iter().all(|x| x.len() >= 2));
                }
            }
        }
    }

    #[test]
    fn zero_step_size_leaves_parameters_unchanged() {
        let (mut cfg, samples) = toy(2, 6, 1);
        cfg.optimizer.learning_rate = 0.0;
        let mut state = ModelState::new(&cfg).unwrap();
        let before = state.model.clone();
        state.train(&samples, 2, |_| {}).unwrap();
        assert_eq!(state.model, before);
        assert_eq!(state.epoch, 2);
        assert!(state.step > 0);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (cfg, samples) = toy(2, 10, 3);
        let mut state = ModelState::new(&cfg).unwrap();
        let mut losses = Vec::new();
        state.train(&samples, 20, |r| losses.push(r.loss.total)).unwrap();
        assert!(losses[19] < losses[0], "{losses:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, samples) = toy(3, 4, 5);
        let a = fit(&ModelConfig { epochs: 3, ..cfg.clone() }, &samples).unwrap();
        let b = fit(&ModelConfig { epochs: 3, ..cfg }, &samples).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_run_equals_straight_run() {
        let (cfg, samples) = toy(2, 5, 8);
        let mut straight = ModelState::new(&cfg).unwrap();
        straight.train(&samples, 4, |_| {}).unwrap();
        let mut split = ModelState::new(&cfg).unwrap();
        split.train(&samples, 2, |_| {}).unwrap();
        let mut resumed = split.clone();
        resumed.train(&samples, 2, |_| {}).unwrap();
        assert_eq!(resumed, straight);
    }

    #[test]
    fn contrastive_needs_pairs() {
        let (cfg, samples) = toy(2, 3, 2);
        let mut state = ModelState::new(&cfg).unwrap();
        assert!(matches!(state.train_epoch(&samples[..1]), Err(Error::Config(_))));
        assert!(matches!(state.train_epoch(&[]), Err(Error::Input(_))));
        let bad = ModelConfig { batch_size: 1, ..cfg };
        assert!(matches!(ModelState::new(&bad), Err(Error::Config(_))));
    }
}
