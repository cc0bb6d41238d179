use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, Matrix};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored as out×in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    #[serde(skip)]
    cached_input: Option<Vec<f64>>,
}

/// Gradients of one linear application.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl PartialEq for LinearLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.bias == other.bias
    }
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("LinearLayer::new", weight.shape(), format!("bias {}", bias.len())));
        }
        Ok(Self {
            weight,
            bias,
            cached_input: None,
        })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            cached_input: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
            cached_input: None,
        }
    }

    /// Glorot-normal weights, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (input + output) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Matrix::from_fn(output, input, |_, _| normal.sample(rng));
        Self {
            weight,
            bias: vec![0.0; output],
            cached_input: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// Stateless forward pass.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x).map_err(|_| {
            Error::shape("linear", self.weight.shape(), format!("input {}", x.len()))
        })?;
        for (yi, b) in y.iter_mut().zip(&self.bias) {
            *yi += b;
        }
        Ok(y)
    }

    /// Forward pass that remembers `x` for a later [`LinearLayer::backward`].
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.apply(x)?;
        self.cached_input = Some(x.to_vec());
        Ok(y)
    }

    /// Gradients for the input cached by the last [`LinearLayer::forward`].
    pub fn backward(&self, upstream: &[f64]) -> Result<LinearGrads> {
        let x = self
            .cached_input
            .as_deref()
            .ok_or(Error::State("linear backward called before forward"))?;
        self.grads(x, upstream)
    }

    /// Stateless backward pass given the forward input.
    pub fn grads(&self, x: &[f64], upstream: &[f64]) -> Result<LinearGrads> {
        if upstream.len() != self.output_dim() || x.len() != self.input_dim() {
            return Err(Error::shape(
                "linear backward",
                self.weight.shape(),
                format!("input {} / upstream {}", x.len(), upstream.len()),
            ));
        }
        let mut weight = Matrix::zeros(self.output_dim(), self.input_dim());
        for (o, &g) in upstream.iter().enumerate() {
            axpy(weight.row_mut(o), g, x);
        }
        Ok(LinearGrads {
            weight,
            bias: upstream.to_vec(),
            input: self.weight.matvec_transposed(upstream)?,
        })
    }
}
