use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ModelConfig;
use crate::contrastive::{contrastive_loss, contrastive_loss_and_grad, Batch, ProjectionCache, ProjectionHead};
use crate::data::{sample_frames, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{axpy, softmax_cross_entropy, LayerNorm, LayerNormCache, LinearLayer, Matrix};
use crate::par;
use crate::tcn::{TcnCache, TcnStack};
use crate::vsc::{self, PartitionResult};

const NORM_EPSILON: f64 = 1e-5;
/// Initial bias of both projection heads. Cosine similarity jumps at the
/// origin, so rectified projections should not start there.
const HEAD_BIAS: f64 = 0.1;

/// One model input: semantic vectors plus exactly `frames` visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub frames: Matrix,
    pub label: usize,
}

/// Checks a dataset against the model dimensions and samples the configured
/// number of frames from every record.
pub fn prepare_samples(dataset: &Dataset, cfg: &ModelConfig) -> Result<Vec<Sample>> {
    let h = &dataset.header;
    let pairs = [
        ("classes", h.classes as usize, cfg.classes),
        ("text_dim", h.text_dim as usize, cfg.text_dim),
        ("audio_dim", h.audio_dim as usize, cfg.audio_dim),
        ("visual_dim", h.frame_dim as usize, cfg.visual_dim),
    ];
    for (name, data, model) in pairs {
        if data != model {
            return Err(Error::Config(format!(
                "data header has {name} = {data} but model.{name} = {model}"
            )));
        }
    }
    dataset
        .records
        .iter()
        .map(|r| {
            if r.frames.rows() < cfg.frames {
                return Err(Error::Input(format!(
                    "record {} has {} frames, need at least {}",
                    r.id,
                    r.frames.rows(),
                    cfg.frames
                )));
            }
            Ok(Sample {
                text: r.text.clone(),
                audio: r.audio.clone(),
                frames: sample_frames(&r.frames, cfg.frames)?,
                label: r.label,
            })
        })
        .collect()
}

/// Weighted training objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_cl: f64,
    pub total: f64,
    pub alpha_ce: f64,
    pub beta_cl: f64,
}

impl LossBreakdown {
    pub fn new(l_ce: f64, l_cl: f64, alpha_ce: f64, beta_cl: f64) -> Self {
        Self {
            l_ce,
            l_cl,
            total: alpha_ce * l_ce + beta_cl * l_cl,
            alpha_ce,
            beta_cl,
        }
    }
}

/// Mean cross-entropy of `logits` plus `beta_cl` times the contrastive loss
/// of `batch`. The contrastive term is skipped (and reported as zero) when
/// `beta_cl` is zero or no batch is given.
pub fn combined_loss(
    logits: &[Vec<f64>],
    labels: &[usize],
    batch: Option<&Batch>,
    alpha_ce: f64,
    beta_cl: f64,
    tau_cl: f64,
) -> Result<LossBreakdown> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape("combined_loss", logits.len(), labels.len()));
    }
    let mut l_ce = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        l_ce += softmax_cross_entropy(z, y)?.0;
    }
    l_ce /= logits.len() as f64;
    let l_cl = match batch {
        Some(b) if beta_cl > 0.0 => contrastive_loss(b, tau_cl)?.0,
        _ => 0.0,
    };
    Ok(LossBreakdown::new(l_ce, l_cl, alpha_ce, beta_cl))
}

/// Name and shape of one trainable parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything one sample's forward pass produces.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub logits: Vec<f64>,
    /// Guidance vector from the text and audio branches.
    pub guidance: Vec<f64>,
    /// Pooled TCN output, zero when the video branch is disabled.
    pub video: Vec<f64>,
    pub anchor: Vec<f64>,
    pub target: Vec<f64>,
    pub compression: Option<PartitionResult>,
    cache: ForwardCache,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    fused: Vec<f64>,
    norm: Vec<LayerNormCache>,
    tcn: Option<TcnCache>,
    anchor: ProjectionCache,
    target: ProjectionCache,
}

/// All trainable parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub text_proj: LinearLayer,
    pub audio_proj: LinearLayer,
    /// Applied to every compressed token before the TCN.
    pub norm: LayerNorm,
    pub tcn: TcnStack,
    pub anchor_head: ProjectionHead,
    pub target_head: ProjectionHead,
    pub classifier: LinearLayer,
}

impl Model {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let text_proj = LinearLayer::init(c.text_dim, c.visual_dim, &mut rng);
        let audio_proj = LinearLayer::init(c.audio_dim, c.visual_dim, &mut rng);
        let tcn = TcnStack::init(&c.tcn, c.visual_dim, &mut rng)?;
        let head = |input: usize, rng: &mut ChaCha8Rng| {
            let mut l = LinearLayer::init(input, c.projection_dim, rng);
            l.bias.iter_mut().for_each(|b| *b = HEAD_BIAS);
            ProjectionHead::new(l)
        };
        let anchor_head = head(c.visual_dim, &mut rng);
        let target_head = head(c.video_dim(), &mut rng);
        let classifier = LinearLayer::init(c.fused_dim(), c.classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            text_proj,
            audio_proj,
            norm: LayerNorm::new(c.visual_dim, NORM_EPSILON),
            tcn,
            anchor_head,
            target_head,
            classifier,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.block_info().iter().map(BlockInfo::len).sum()
    }

    pub fn block_info(&self) -> Vec<BlockInfo> {
        let lin = |name: &str, l: &LinearLayer| {
            [
                BlockInfo {
                    name: format!("{name}.weight"),
                    shape: vec![l.output_dim(), l.input_dim()],
                },
                BlockInfo {
                    name: format!("{name}.bias"),
                    shape: vec![l.output_dim()],
                },
            ]
        };
        let mut out = Vec::new();
        out.extend(lin("text_proj", &self.text_proj));
        out.extend(lin("audio_proj", &self.audio_proj));
        out.push(BlockInfo {
            name: "norm.gain".into(),
            shape: vec![self.norm.dim()],
        });
        out.push(BlockInfo {
            name: "norm.shift".into(),
            shape: vec![self.norm.dim()],
        });
        for (i, layer) in self.tcn.layers.iter().enumerate() {
            let c = &layer.config;
            out.push(BlockInfo {
                name: format!("tcn.{i}.weight"),
                shape: vec![c.kernel_size, c.in_channels, c.out_channels],
            });
            out.push(BlockInfo {
                name: format!("tcn.{i}.bias"),
                shape: vec![c.out_channels],
            });
        }
        out.extend(lin("anchor_head", &self.anchor_head.linear));
        out.extend(lin("target_head", &self.target_head.linear));
        out.extend(lin("classifier", &self.classifier));
        out
    }

    /// Parameter values in [`Model::block_info`] order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.text_proj.weight.data(),
            &self.text_proj.bias,
            self.audio_proj.weight.data(),
            &self.audio_proj.bias,
            &self.norm.gain,
            &self.norm.shift,
        ];
        for layer in &self.tcn.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        for l in [&self.anchor_head.linear, &self.target_head.linear, &self.classifier] {
            out.push(l.weight.data());
            out.push(&l.bias);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let Self {
            text_proj,
            audio_proj,
            norm,
            tcn,
            anchor_head,
            target_head,
            classifier,
            ..
        } = self;
        let mut out: Vec<&mut [f64]> = vec![
            text_proj.weight.data_mut(),
            &mut text_proj.bias,
            audio_proj.weight.data_mut(),
            &mut audio_proj.bias,
            &mut norm.gain,
            &mut norm.shift,
        ];
        for layer in &mut tcn.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        for l in [&mut anchor_head.linear, &mut target_head.linear, classifier] {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias);
        }
        out
    }

    /// Zero gradient with the same layout as [`Model::blocks`].
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.blocks().iter().map(|b| vec![0.0; b.len()]).collect()
    }

    /// Guidance vector: sum of the enabled text and audio projections.
    pub fn early_fuse(&self, text: &[f64], audio: &[f64]) -> Result<Vec<f64>> {
        if text.len() != self.config.text_dim {
            return Err(Error::shape("early_fuse text", text.len(), self.config.text_dim));
        }
        if audio.len() != self.config.audio_dim {
            return Err(Error::shape("early_fuse audio", audio.len(), self.config.audio_dim));
        }
        let mut g = vec![0.0; self.config.visual_dim];
        if self.config.modalities.text {
            axpy(&mut g, 1.0, &self.text_proj.apply(text)?);
        }
        if self.config.modalities.audio {
            axpy(&mut g, 1.0, &self.audio_proj.apply(audio)?);
        }
        Ok(g)
    }

    pub fn forward(&self, sample: &Sample) -> Result<SampleForward> {
        let cfg = &self.config;
        if sample.frames.rows() != cfg.frames {
            return Err(Error::Input(format!(
                "expected {} frames, got {}",
                cfg.frames,
                sample.frames.rows()
            )));
        }
        if sample.frames.cols() != cfg.visual_dim {
            return Err(Error::shape("forward frames", sample.frames.shape(), cfg.visual_dim));
        }
        let guidance = self.early_fuse(&sample.text, &sample.audio)?;

        let (video, compression, norm_caches, tcn_cache) = if cfg.modalities.video {
            let part = vsc::compress(&sample.frames, &guidance, &cfg.vsc)?;
            let mut rows = Vec::with_capacity(part.merged.rows());
            let mut caches = Vec::with_capacity(part.merged.rows());
            for row in part.merged.row_iter() {
                let (y, c) = self.norm.forward(row)?;
                rows.push(y);
                caches.push(c);
            }
            let (h, tc) = self.tcn.apply(&Matrix::from_rows(&rows)?)?;
            (h, Some(part), caches, Some(tc))
        } else {
            (vec![0.0; cfg.video_dim()], None, Vec::new(), None)
        };

        let mut fused = guidance.clone();
        fused.extend_from_slice(&video);
        let logits = self.classifier.apply(&fused)?;
        let (anchor, anchor_cache) = self.anchor_head.forward_row(&guidance)?;
        let (target, target_cache) = self.target_head.forward_row(&video)?;
        Ok(SampleForward {
            logits,
            guidance,
            video,
            anchor,
            target,
            compression,
            cache: ForwardCache {
                fused,
                norm: norm_caches,
                tcn: tcn_cache,
                anchor: anchor_cache,
                target: target_cache,
            },
        })
    }

    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.forward(sample)?.logits)
    }

    /// Argmax of the logits, lowest class on ties.
    pub fn predict(&self, sample: &Sample) -> Result<usize> {
        let z = self.logits(sample)?;
        Ok((1..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b }))
    }

    /// Parameter gradients of one sample given upstream gradients for its
    /// logits and its two projections. The compression routing is held fixed.
    fn backward(
        &self,
        sample: &Sample,
        fwd: &SampleForward,
        d_logits: &[f64],
        d_anchor: &[f64],
        d_target: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.config;
        let d = cfg.visual_dim;
        let cls = self.classifier.grads(&fwd.cache.fused, d_logits)?;
        let mut dg = cls.input[..d].to_vec();
        let mut dh = cls.input[d..].to_vec();
        let ah = self.anchor_head.backward(&fwd.cache.anchor, d_anchor)?;
        axpy(&mut dg, 1.0, &ah.input);
        let th = self.target_head.backward(&fwd.cache.target, d_target)?;
        axpy(&mut dh, 1.0, &th.input);

        let mut grads = self.zero_grads();
        let lin_grads = |grads: &mut Vec<Vec<f64>>, at: usize, layer: &LinearLayer, x: &[f64], up: &[f64]| {
            let g = layer.grads(x, up)?;
            grads[at] = g.weight.into_data();
            grads[at + 1] = g.bias;
            Ok::<_, Error>(())
        };
        if cfg.modalities.text {
            lin_grads(&mut grads, 0, &self.text_proj, &sample.text, &dg)?;
        }
        if cfg.modalities.audio {
            lin_grads(&mut grads, 2, &self.audio_proj, &sample.audio, &dg)?;
        }
        if let Some(tc) = &fwd.cache.tcn {
            let tg = self.tcn.grads(tc, &dh)?;
            for (r, c) in fwd.cache.norm.iter().enumerate() {
                let ng = self.norm.backward(c, tg.input.row(r));
                axpy(&mut grads[4], 1.0, &ng.gain);
                axpy(&mut grads[5], 1.0, &ng.shift);
            }
            for (i, (w, b)) in tg.weights.into_iter().zip(tg.biases).enumerate() {
                grads[6 + 2 * i] = w;
                grads[7 + 2 * i] = b;
            }
        }
        let at = 6 + 2 * self.tcn.layers.len();
        grads[at] = ah.weight.into_data();
        grads[at + 1] = ah.bias;
        grads[at + 2] = th.weight.into_data();
        grads[at + 3] = th.bias;
        grads[at + 4] = cls.weight.into_data();
        grads[at + 5] = cls.bias;
        Ok(grads)
    }

    fn contrastive_batch(&self, forwards: &[SampleForward], labels: &[usize]) -> Result<Batch> {
        let anchor = Matrix::from_rows(&forwards.iter().map(|f| &f.anchor[..]).collect::<Vec<_>>())?;
        let target = Matrix::from_rows(&forwards.iter().map(|f| &f.target[..]).collect::<Vec<_>>())?;
        Batch::new(anchor, target, labels.to_vec())
    }

    fn check_batch(&self, samples: &[&Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        if self.config.beta_cl > 0.0 && samples.len() < 2 {
            return Err(Error::Config(
                "contrastive loss needs at least 2 samples per batch".into(),
            ));
        }
        Ok(())
    }

    /// Combined loss of a batch without gradients.
    pub fn batch_loss(&self, samples: &[&Sample]) -> Result<LossBreakdown> {
        self.check_batch(samples)?;
        let cfg = &self.config;
        let forwards = par::map_slice(samples, |s| self.forward(s))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let logits: Vec<Vec<f64>> = forwards.iter().map(|f| f.logits.clone()).collect();
        let batch = if cfg.beta_cl > 0.0 {
            Some(self.contrastive_batch(&forwards, &labels)?)
        } else {
            None
        };
        combined_loss(&logits, &labels, batch.as_ref(), cfg.alpha_ce, cfg.beta_cl, cfg.tau_cl)
    }

    /// Combined loss of a batch and its gradient for every parameter block.
    pub fn batch_loss_and_grads(&self, samples: &[&Sample]) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        self.check_batch(samples)?;
        let cfg = &self.config;
        let b = samples.len();
        let forwards = par::map_slice(samples, |s| self.forward(s))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

        let mut l_ce = 0.0;
        let mut d_logits = Vec::with_capacity(b);
        for (f, &y) in forwards.iter().zip(&labels) {
            let (l, mut g) = softmax_cross_entropy(&f.logits, y)?;
            l_ce += l;
            g.iter_mut().for_each(|v| *v *= cfg.alpha_ce / b as f64);
            d_logits.push(g);
        }
        l_ce /= b as f64;

        let p = cfg.projection_dim;
        let (l_cl, d_anchor, d_target) = if cfg.beta_cl > 0.0 {
            let batch = self.contrastive_batch(&forwards, &labels)?;
            let (l, g) = contrastive_loss_and_grad(&batch, cfg.tau_cl)?;
            (l, g.anchor.scale(cfg.beta_cl), g.target.scale(cfg.beta_cl))
        } else {
            (0.0, Matrix::zeros(b, p), Matrix::zeros(b, p))
        };

        let per_sample = par::map_range(b, |i| {
            self.backward(samples[i], &forwards[i], &d_logits[i], d_anchor.row(i), d_target.row(i))
        });
        let mut grads = self.zero_grads();
        for g in per_sample {
            for (acc, blk) in grads.iter_mut().zip(g?) {
                axpy(acc, 1.0, &blk);
            }
        }
        Ok((LossBreakdown::new(l_ce, l_cl, cfg.alpha_ce, cfg.beta_cl), grads))
    }
}
