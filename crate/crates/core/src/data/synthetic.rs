//! Seeded synthetic multimodal datasets.
//!
//! Every class gets one mean per modality; class means of a modality are at
//! least `separation` apart. A sample is its class mean plus isotropic
//! Gaussian noise of scale `noise` in every modality. In each frame sequence,
//! `ceil(background_fraction * frames)` randomly placed rows are replaced by
//! background tokens drawn from one class-independent zero-mean distribution
//! whose per-coordinate scale is `separation / sqrt(frame_dim)`, so their norm
//! is comparable to a class token's.
//!
//! All generated values are rounded to `f32` precision so that writing them
//! to an MSIF file and reading them back is lossless.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::msif::{Dataset, DatasetHeader, FeatureRecord};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub text_dim: usize,
    pub audio_dim: usize,
    pub frame_dim: usize,
    pub frames: usize,
    pub separation: f64,
    pub noise: f64,
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 50,
            text_dim: 16,
            audio_dim: 16,
            frame_dim: 16,
            frames: 15,
            separation: 4.0,
            noise: 0.5,
            background_fraction: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("classes", self.classes),
            ("samples_per_class", self.samples_per_class),
            ("text_dim", self.text_dim),
            ("audio_dim", self.audio_dim),
            ("frame_dim", self.frame_dim),
            ("frames", self.frames),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be >= 1")));
            }
        }
        if !(self.separation > 0.0) {
            return Err(Error::Config("data.separation must be > 0".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("data.noise must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::Config("data.background_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of background rows in every generated frame sequence.
    pub fn background_count(&self) -> usize {
        (self.background_fraction * self.frames as f64).ceil() as usize
    }

    /// Separation over noise; infinite when noise is zero.
    pub fn separation_noise_ratio(&self) -> f64 {
        self.separation / self.noise
    }
}

/// Generated records plus the ground truth the generator knows about.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Sorted background row indices, one list per record.
    pub background: Vec<Vec<usize>>,
    /// Per-class frame means (`classes` × `frame_dim`).
    pub frame_means: Vec<Vec<f64>>,
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `classes` Gaussian points and rescales them so the closest pair is
/// exactly `separation` apart.
fn class_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..classes).map(|_| gaussian(rng, dim, 1.0)).collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d: f64 = raw[a].iter().zip(&raw[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = if min_dist.is_finite() && min_dist > 0.0 {
        separation / min_dist
    } else {
        // a single class: put its mean at distance `separation` from the origin
        let n = raw[0].iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        separation / n
    };
    raw.into_iter()
        .map(|m| m.into_iter().map(|v| v * scale).collect())
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let text_means = class_means(&mut rng, spec.classes, spec.text_dim, spec.separation);
    let audio_means = class_means(&mut rng, spec.classes, spec.audio_dim, spec.separation);
    let frame_means = class_means(&mut rng, spec.classes, spec.frame_dim, spec.separation);
    let bg_scale = spec.separation / (spec.frame_dim as f64).sqrt();
    let n_bg = spec.background_count();

    let total = spec.classes * spec.samples_per_class;
    let mut records = Vec::with_capacity(total);
    let mut background = Vec::with_capacity(total);
    for n in 0..total {
        let label = n % spec.classes;
        let sample = |rng: &mut ChaCha8Rng, mean: &[f64]| -> Vec<f64> {
            let noise = gaussian(rng, mean.len(), spec.noise);
            mean.iter().zip(noise).map(|(m, e)| round32(m + e)).collect()
        };
        let text = sample(&mut rng, &text_means[label]);
        let audio = sample(&mut rng, &audio_means[label]);
        let mut bg: Vec<usize> = index::sample(&mut rng, spec.frames, n_bg).into_vec();
        bg.sort_unstable();
        let mut rows = Vec::with_capacity(spec.frames);
        for t in 0..spec.frames {
            if bg.binary_search(&t).is_ok() {
                rows.push(gaussian(&mut rng, spec.frame_dim, bg_scale).into_iter().map(round32).collect());
            } else {
                rows.push(sample(&mut rng, &frame_means[label]));
            }
        }
        records.push(FeatureRecord {
            id: format!("syn-{n:05}"),
            label,
            text,
            audio,
            frames: Matrix::from_rows(&rows)?,
        });
        background.push(bg);
    }
    let header = DatasetHeader {
        classes: spec.classes as u32,
        text_dim: spec.text_dim as u32,
        audio_dim: spec.audio_dim as u32,
        frame_dim: spec.frame_dim as u32,
    };
    Ok(SyntheticData {
        dataset: Dataset { header, records },
        background,
        frame_means,
    })
}
