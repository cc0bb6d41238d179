//! Dilated causal temporal convolution stack.
//!
//! Each layer computes
//! `y[t][c] = b[c] + sum_k sum_ci x[t - k*d][ci] * w[k][ci][c]`
//! with zero left padding, so output step `t` never reads an input past `t`.
//! Layers are separated by a rectifier; the final layer is linear and its
//! output sequence is pooled over time into one feature vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Temporal pooling applied after the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnLayerConfig {
    pub kernel_size: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl TcnLayerConfig {
    /// Extra past steps this layer lets an output see.
    pub fn receptive_contribution(&self) -> usize {
        (self.kernel_size - 1) * self.dilation
    }

    fn weight_len(&self) -> usize {
        self.kernel_size * self.in_channels * self.out_channels
    }

    fn w_index(&self, k: usize, ci: usize, co: usize) -> usize {
        (k * self.in_channels + ci) * self.out_channels + co
    }
}

/// Architecture description used to build a [`TcnStack`] from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnSpec {
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    /// Hidden and output width; `None` keeps the input width.
    pub channels: Option<usize>,
    pub pooling: Pooling,
    pub residual: bool,
}

impl Default for TcnSpec {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            channels: None,
            pooling: Pooling::Last,
            residual: false,
        }
    }
}

impl TcnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 {
            return Err(Error::Config("tcn.kernel_size must be >= 1".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("tcn.dilations must be a nonempty list of values >= 1".into()));
        }
        if self.channels == Some(0) {
            return Err(Error::Config("tcn.channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self, in_channels: usize) -> usize {
        self.channels.unwrap_or(in_channels)
    }
}

/// Initial bias of every layer. Zero padding and dead units feed exact
/// zeros forward; a small positive bias keeps the next pre-activation off
/// the rectifier's kink.
pub const INIT_BIAS: f64 = 0.01;

/// One convolution layer: config plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnLayer {
    pub config: TcnLayerConfig,
    /// Kernel laid out `[k][in][out]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TcnLayer {
    pub fn new(config: TcnLayerConfig, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if config.kernel_size == 0 || config.dilation == 0 || config.in_channels == 0 || config.out_channels == 0 {
            return Err(Error::Config(format!("degenerate tcn layer {config:?}")));
        }
        if weight.len() != config.weight_len() || bias.len() != config.out_channels {
            return Err(Error::shape(
                "TcnLayer::new",
                format!("K={} in={} out={}", config.kernel_size, config.in_channels, config.out_channels),
                format!("weight {} / bias {}", weight.len(), bias.len()),
            ));
        }
        Ok(Self { config, weight, bias })
    }

    pub fn zeros(config: TcnLayerConfig) -> Self {
        Self {
            weight: vec![0.0; config.weight_len()],
            bias: vec![0.0; config.out_channels],
            config,
        }
    }

    /// He-normal kernel, bias [`INIT_BIAS`].
    pub fn init(config: TcnLayerConfig, rng: &mut impl Rng) -> Self {
        let fan_in = (config.kernel_size * config.in_channels) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        Self {
            weight: (0..config.weight_len()).map(|_| normal.sample(rng)).collect(),
            bias: vec![INIT_BIAS; config.out_channels],
            config,
        }
    }

    pub fn kernel(&self, k: usize, ci: usize, co: usize) -> f64 {
        self.weight[self.config.w_index(k, ci, co)]
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Causal dilated convolution of a T×C_in sequence.
pub fn causal_conv(x: &Matrix, layer: &TcnLayer) -> Result<Matrix> {
    let cfg = &layer.config;
    if x.cols() != cfg.in_channels {
        return Err(Error::shape(
            "causal_conv",
            x.shape(),
            format!("layer in_channels {}", cfg.in_channels),
        ));
    }
    let t_len = x.rows();
    let mut y = Matrix::zeros(t_len, cfg.out_channels);
    for t in 0..t_len {
        let out = y.row_mut(t);
        out.copy_from_slice(&layer.bias);
        for k in 0..cfg.kernel_size {
            let Some(src) = t.checked_sub(k * cfg.dilation) else {
                break;
            };
            for (ci, &xv) in x.row(src).iter().enumerate() {
                let base = cfg.w_index(k, ci, 0);
                for (o, w) in out.iter_mut().zip(&layer.weight[base..base + cfg.out_channels]) {
                    *o += xv * w;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`causal_conv`]: `(weight, bias, input)`.
fn causal_conv_backward(x: &Matrix, layer: &TcnLayer, dy: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let cfg = &layer.config;
    let mut dw = vec![0.0; layer.weight.len()];
    let mut db = vec![0.0; cfg.out_channels];
    let mut dx = Matrix::zeros(x.rows(), cfg.in_channels);
    for t in 0..dy.rows() {
        let g = dy.row(t);
        for (b, gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        for k in 0..cfg.kernel_size {
            let Some(src) = t.checked_sub(k * cfg.dilation) else {
                break;
            };
            for ci in 0..cfg.in_channels {
                let base = cfg.w_index(k, ci, 0);
                let xv = x.get(src, ci);
                let mut acc = 0.0;
                for (co, gv) in g.iter().enumerate() {
                    dw[base + co] += xv * gv;
                    acc += layer.weight[base + co] * gv;
                }
                let cur = dx.get(src, ci);
                dx.set(src, ci, cur + acc);
            }
        }
    }
    (dw, db, dx)
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct TcnCache {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer (residual included).
    pre_activations: Vec<Matrix>,
}

/// Gradients for every layer and for the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcnStack {
    pub layers: Vec<TcnLayer>,
    pub pooling: Pooling,
    /// Adds each layer's input to its output before the rectifier.
    pub residual: bool,
    #[serde(skip)]
    cache: Option<TcnCache>,
}

impl PartialEq for TcnStack {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.pooling == other.pooling && self.residual == other.residual
    }
}

impl TcnStack {
    pub fn new(layers: Vec<TcnLayer>, pooling: Pooling, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("tcn stack needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].config.out_channels != pair[1].config.in_channels {
                return Err(Error::shape(
                    "TcnStack::new",
                    format!("layer out {}", pair[0].config.out_channels),
                    format!("next in {}", pair[1].config.in_channels),
                ));
            }
        }
        if residual && layers.iter().any(|l| l.config.in_channels != l.config.out_channels) {
            return Err(Error::Config("residual tcn layers need equal in/out channels".into()));
        }
        Ok(Self {
            layers,
            pooling,
            residual,
            cache: None,
        })
    }

    /// Randomly initialized stack for `in_channels` input features.
    pub fn init(spec: &TcnSpec, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let width = spec.output_dim(in_channels);
        let mut layers = Vec::with_capacity(spec.dilations.len());
        let mut cin = in_channels;
        for &dilation in &spec.dilations {
            let config = TcnLayerConfig {
                kernel_size: spec.kernel_size,
                dilation,
                in_channels: cin,
                out_channels: width,
            };
            layers.push(TcnLayer::init(config, rng));
            cin = width;
        }
        Self::new(layers, spec.pooling, spec.residual)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].config.in_channels
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].config.out_channels
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(TcnLayer::parameter_count).sum()
    }

    /// Stateless forward pass returning the pooled feature and the cache.
    pub fn apply(&self, x: &Matrix) -> Result<(Vec<f64>, TcnCache)> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = causal_conv(&h, layer)?;
            if self.residual {
                z = z.add(&h)?;
            }
            let next = if l < last {
                Matrix::new(z.rows(), z.cols(), z.data().iter().map(|v| v.max(0.0)).collect())?
            } else {
                z.clone()
            };
            inputs.push(h);
            pre_activations.push(z);
            h = next;
        }
        let pooled = match self.pooling {
            Pooling::Last => h.row(h.rows() - 1).to_vec(),
            Pooling::Mean => crate::numerics::mean_pool_rows(&h),
        };
        Ok((pooled, TcnCache { inputs, pre_activations }))
    }

    /// Forward pass that keeps the cache for [`TcnStack::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Vec<f64>> {
        let (y, cache) = self.apply(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&self, upstream: &[f64]) -> Result<TcnGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::State("tcn backward called before forward"))?;
        self.grads(cache, upstream)
    }

    /// Stateless backward pass from a cache produced by [`TcnStack::apply`].
    pub fn grads(&self, cache: &TcnCache, upstream: &[f64]) -> Result<TcnGrads> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("tcn backward", self.output_dim(), upstream.len()));
        }
        let t_len = cache.inputs[0].rows();
        let mut dh = Matrix::zeros(t_len, self.output_dim());
        match self.pooling {
            Pooling::Last => dh.row_mut(t_len - 1).copy_from_slice(upstream),
            Pooling::Mean => {
                let inv = 1.0 / t_len as f64;
                for t in 0..t_len {
                    for (d, u) in dh.row_mut(t).iter_mut().zip(upstream) {
                        *d = u * inv;
                    }
                }
            }
        }
        self.sequence_grads(cache, dh)
    }

    /// Backward pass from a gradient on every output time step (before
    /// pooling).
    pub fn sequence_grads(&self, cache: &TcnCache, mut dh: Matrix) -> Result<TcnGrads> {
        let last = self.layers.len() - 1;
        if dh.shape() != cache.pre_activations[last].shape() {
            return Err(Error::shape("tcn backward", cache.pre_activations[last].shape(), dh.shape()));
        }
        let mut weights = vec![Vec::new(); self.layers.len()];
        let mut biases = vec![Vec::new(); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let mut dz = dh;
            if l < last {
                for (d, z) in dz.data_mut().iter_mut().zip(cache.pre_activations[l].data()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (dw, db, mut dx) = causal_conv_backward(&cache.inputs[l], &self.layers[l], &dz);
            if self.residual {
                dx = dx.add(&dz)?;
            }
            weights[l] = dw;
            biases[l] = db;
            dh = dx;
        }
        Ok(TcnGrads {
            weights,
            biases,
            input: dh,
        })
    }
}

/// `1 + sum (K - 1) * d` over the layers.
pub fn receptive_field(stack: &TcnStack) -> usize {
    1 + stack
        .layers
        .iter()
        .map(|l| l.config.receptive_contribution())
        .sum::<usize>()
}

/// Stateless forward pass.
pub fn tcn_forward(x: &Matrix, stack: &TcnStack) -> Result<Vec<f64>> {
    Ok(stack.apply(x)?.0)
}
