//! Finite-difference audits of every hand-written gradient, grouped by
//! parameter block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{Model, Sample};
use crate::contrastive::{contrastive_grad, contrastive_loss, Batch, ProjectionHead};
use crate::error::{Error, Result};
use crate::numerics::{dot, GradCheck, GradCheckReport, LinearGrads, LinearLayer, Matrix};
use crate::tcn::{TcnSpec, TcnStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub text_dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub projection_dim: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub frames: usize,
    /// Random batches for the standalone contrastive check.
    pub contrastive_batches: usize,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            text_dim: 4,
            audio_dim: 4,
            visual_dim: 4,
            projection_dim: 4,
            classes: 2,
            batch_size: 2,
            frames: 3,
            contrastive_batches: 12,
            tolerance: 1e-4,
            step: 1e-5,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.step > 0.0) {
            return Err(Error::Config("gradcheck.tolerance and gradcheck.step must be > 0".into()));
        }
        self.model_config(0).validate()
    }

    /// Model used by the end-to-end audit.
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            text_dim: self.text_dim,
            audio_dim: self.audio_dim,
            visual_dim: self.visual_dim,
            projection_dim: self.projection_dim,
            classes: self.classes,
            frames: self.frames,
            batch_size: self.batch_size,
            seed,
            ..ModelConfig::default()
        }
    }
}

/// Result for one parameter block, possibly pooled over several draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub suite: &'static str,
    pub block: String,
    pub parameter_count: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub pass: bool,
}

impl BlockCheck {
    fn from_report(suite: &'static str, block: String, r: &GradCheckReport) -> Self {
        Self {
            suite,
            block,
            parameter_count: r.parameter_count,
            max_abs_error: r.max_abs_error,
            max_rel_error: r.max_rel_error,
            pass: r.pass,
        }
    }

    fn absorb(&mut self, r: &GradCheckReport) {
        self.parameter_count += r.parameter_count;
        self.max_abs_error = self.max_abs_error.max(r.max_abs_error);
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.pass &= r.pass;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub pass: bool,
    pub checks: Vec<BlockCheck>,
}

impl AuditReport {
    pub fn failing(&self) -> Vec<&BlockCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Corrupts analytic gradients of blocks whose name contains the pattern.
/// Only used to prove the audit can fail.
#[derive(Debug, Clone, Default)]
pub struct Fault(pub Option<String>);

impl Fault {
    fn apply(&self, block: &str, grad: &mut [f64]) {
        if let Some(p) = &self.0 {
            if block.contains(p.as_str()) {
                grad.iter_mut().for_each(|g| *g = *g * 1.1 + 1e-3);
            }
        }
    }
}

struct Auditor {
    check: GradCheck,
    fault: Fault,
    checks: Vec<BlockCheck>,
}

impl Auditor {
    fn run<F>(&mut self, suite: &'static str, block: String, f: F, mut analytic: Vec<f64>, point: &[f64]) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.fault.apply(&block, &mut analytic);
        let r = self.check.run(f, &analytic, point)?;
        match self.checks.iter_mut().find(|c| c.suite == suite && c.block == block) {
            Some(c) => c.absorb(&r),
            None => self.checks.push(BlockCheck::from_report(suite, block, &r)),
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn contrastive_suite(a: &mut Auditor, cfg: &AuditConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    const TAUS: [f64; 3] = [0.07, 0.5, 1.0];
    for i in 0..cfg.contrastive_batches {
        let b: usize = rng.gen_range(2..=6);
        let p = rng.gen_range(3..=8);
        let tau = TAUS[i % TAUS.len()];
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..b.div_ceil(2) + 1)).collect();
        let batch = Batch::new(random_matrix(rng, b, p), random_matrix(rng, b, p), labels.clone())?;
        let g = contrastive_grad(&batch, tau)?;
        let loss_with = |anchor: &[f64], target: &[f64]| {
            let bt = Batch::new(
                Matrix::new(b, p, anchor.to_vec()).unwrap(),
                Matrix::new(b, p, target.to_vec()).unwrap(),
                labels.clone(),
            )
            .unwrap();
            contrastive_loss(&bt, tau).unwrap().0
        };
        let (an, ta) = (batch.anchor.data(), batch.target.data());
        a.run("contrastive", "anchor".into(), |x| loss_with(x, ta), g.anchor.into_data(), an)?;
        a.run("contrastive", "target".into(), |x| loss_with(an, x), g.target.into_data(), ta)?;
    }
    Ok(())
}

fn tcn_suite(a: &mut Auditor, cfg: &AuditConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    for residual in [false, true] {
        let spec = TcnSpec {
            residual,
            ..TcnSpec::default()
        };
        let mut stack = TcnStack::init(&spec, cfg.visual_dim, rng)?;
        for l in &mut stack.layers {
            l.bias = uniform(rng, l.bias.len());
        }
        let x = random_matrix(rng, 6, cfg.visual_dim);
        let up = uniform(rng, stack.output_dim());
        let (_, cache) = stack.apply(&x)?;
        let g = stack.grads(&cache, &up)?;
        let obj = |s: &TcnStack, x: &Matrix| dot(&up, &s.apply(x).unwrap().0);
        for (i, (gw, gb)) in g.weights.iter().zip(&g.biases).enumerate() {
            let w = stack.layers[i].weight.clone();
            a.run(
                "tcn",
                format!("layer{i}.weight"),
                |p| {
                    let mut s = stack.clone();
                    s.layers[i].weight.copy_from_slice(p);
                    obj(&s, &x)
                },
                gw.clone(),
                &w,
            )?;
            let b = stack.layers[i].bias.clone();
            a.run(
                "tcn",
                format!("layer{i}.bias"),
                |p| {
                    let mut s = stack.clone();
                    s.layers[i].bias.copy_from_slice(p);
                    obj(&s, &x)
                },
                gb.clone(),
                &b,
            )?;
        }
        a.run(
            "tcn",
            "input".into(),
            |p| obj(&stack, &Matrix::new(x.rows(), x.cols(), p.to_vec()).unwrap()),
            g.input.into_data(),
            x.data(),
        )?;
    }
    Ok(())
}

fn linear_checks(
    a: &mut Auditor,
    suite: &'static str,
    name: &str,
    layer: &LinearLayer,
    x: &[f64],
    objective: &(dyn Fn(&LinearLayer, &[f64]) -> f64 + Sync),
    g: LinearGrads,
) -> Result<()> {
    let w = layer.weight.data().to_vec();
    a.run(
        suite,
        format!("{name}.weight"),
        |p| {
            let mut l = layer.clone();
            l.weight.data_mut().copy_from_slice(p);
            objective(&l, x)
        },
        g.weight.into_data(),
        &w,
    )?;
    a.run(
        suite,
        format!("{name}.bias"),
        |p| {
            let mut l = layer.clone();
            l.bias.copy_from_slice(p);
            objective(&l, x)
        },
        g.bias,
        &layer.bias,
    )?;
    a.run(suite, format!("{name}.input"), |p| objective(layer, p), g.input, x)
}

fn projection_suite(a: &mut Auditor, cfg: &AuditConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..3 {
        let mut head = ProjectionHead::new(LinearLayer::init(cfg.visual_dim, cfg.projection_dim, rng));
        head.linear.bias = uniform(rng, cfg.projection_dim);
        let x = uniform(rng, cfg.visual_dim);
        let up = uniform(rng, cfg.projection_dim);
        let (_, cache) = head.forward_row(&x)?;
        let g = head.backward(&cache, &up)?;
        let obj = |l: &LinearLayer, x: &[f64]| dot(&up, &ProjectionHead::new(l.clone()).forward_row(x).unwrap().0);
        linear_checks(a, "projection", "head", &head.linear, &x, &obj, g)?;

        for (name, input_dim) in [("text_proj", cfg.text_dim), ("audio_proj", cfg.audio_dim)] {
            let mut layer = LinearLayer::init(input_dim, cfg.visual_dim, rng);
            layer.bias = uniform(rng, cfg.visual_dim);
            let x = uniform(rng, input_dim);
            let up = uniform(rng, cfg.visual_dim);
            let g = layer.grads(&x, &up)?;
            let obj = |l: &LinearLayer, x: &[f64]| dot(&up, &l.apply(x).unwrap());
            linear_checks(a, "projection", name, &layer, &x, &obj, g)?;
        }
    }
    Ok(())
}

fn pipeline_suite(a: &mut Auditor, cfg: &AuditConfig, seed: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let mcfg = cfg.model_config(seed);
    let model = Model::init(&mcfg)?;
    let samples: Vec<Sample> = (0..cfg.batch_size)
        .map(|i| Sample {
            text: uniform(rng, cfg.text_dim),
            audio: uniform(rng, cfg.audio_dim),
            frames: random_matrix(rng, cfg.frames, cfg.visual_dim),
            label: i % cfg.classes,
        })
        .collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, grads) = model.batch_loss_and_grads(&refs)?;
    for ((b, info), g) in model.block_info().iter().enumerate().zip(grads) {
        let point = model.blocks()[b].to_vec();
        a.run(
            "pipeline",
            info.name.clone(),
            |p| {
                let mut m = model.clone();
                m.blocks_mut()[b].copy_from_slice(p);
                m.batch_loss(&refs).map(|l| l.total).unwrap_or(f64::NAN)
            },
            g,
            &point,
        )?;
    }
    Ok(())
}

/// Runs the contrastive, TCN, projection and end-to-end audits.
pub fn run_audits(cfg: &AuditConfig, seed: u64, fault: Fault) -> Result<AuditReport> {
    cfg.validate()?;
    let mut a = Auditor {
        check: GradCheck::new(cfg.step, cfg.tolerance),
        fault,
        checks: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    contrastive_suite(&mut a, cfg, &mut rng)?;
    tcn_suite(&mut a, cfg, &mut rng)?;
    projection_suite(&mut a, cfg, &mut rng)?;
    pipeline_suite(&mut a, cfg, seed, &mut rng)?;
    Ok(AuditReport {
        seed,
        tolerance: cfg.tolerance,
        step: cfg.step,
        pass: a.checks.iter().all(|c| c.pass),
        checks: a.checks,
    })
}
