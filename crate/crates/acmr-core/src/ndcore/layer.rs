//! Dense affine layer with explicit backward pass.
//!
//! `forward` computes `act(x W + b)` for a batch of row vectors and returns
//! the cache needed by `backward`, which produces exact analytic gradients
//! of the affine+activation composition and accumulates parameter gradients
//! into buffers owned by the layer.

use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn grad_from_preact(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Forward-pass values a layer needs to run its backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    preact: Matrix,
}

impl LayerCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    w: Matrix, // in x out
    b: Vec<f64>,
    activation: Activation,
    grad_w: Matrix,
    grad_b: Vec<f64>,
}

impl DenseLayer {
    /// Xavier-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut StdRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut w = Matrix::zeros(in_dim, out_dim);
        for v in w.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        DenseLayer {
            w,
            b: vec![0.0; out_dim],
            activation,
            grad_w: Matrix::zeros(in_dim, out_dim),
            grad_b: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            w: Matrix::zeros(in_dim, out_dim),
            b: vec![0.0; out_dim],
            activation,
            grad_w: Matrix::zeros(in_dim, out_dim),
            grad_b: vec![0.0; out_dim],
        }
    }

    /// Rebuilds a layer from saved parameters (checkpoint loading).
    pub fn from_parts(w: Matrix, b: Vec<f64>, activation: Activation) -> Result<Self> {
        if b.len() != w.cols() {
            return Err(CoreError::shape(
                "DenseLayer::from_parts",
                format!("{} bias entries", w.cols()),
                format!("{}", b.len()),
            ));
        }
        let grad_w = Matrix::zeros(w.rows(), w.cols());
        let grad_b = vec![0.0; b.len()];
        Ok(DenseLayer {
            w,
            b,
            activation,
            grad_w,
            grad_b,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn grad_w(&self) -> &Matrix {
        &self.grad_w
    }

    pub fn grad_b(&self) -> &[f64] {
        &self.grad_b
    }

    pub fn grad_w_mut(&mut self) -> &mut Matrix {
        &mut self.grad_w
    }

    pub fn grad_b_mut(&mut self) -> &mut [f64] {
        &mut self.grad_b
    }

    /// Simultaneous mutable views of `(w, b, grad_w, grad_b)`.
    pub fn split_params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        (
            self.w.data_mut(),
            &mut self.b,
            self.grad_w.data_mut(),
            &mut self.grad_b,
        )
    }

    /// `act(x W + b)` plus the cache for backward.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerCache)> {
        let preact = self.preactivate(x)?;
        let act = self.activation;
        let out = preact.map(|z| act.apply(z));
        Ok((
            out,
            LayerCache {
                input: x.clone(),
                preact,
            },
        ))
    }

    /// Forward without caching, for inference paths.
    pub fn forward_only(&self, x: &Matrix) -> Result<Matrix> {
        let preact = self.preactivate(x)?;
        let act = self.activation;
        Ok(preact.map(|z| act.apply(z)))
    }

    fn preactivate(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(CoreError::shape(
                "DenseLayer::forward",
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        x.matmul(&self.w)?.add_row_broadcast(&self.b)
    }

    /// Backpropagates `upstream` (dL/d out), accumulating dL/dW and dL/db
    /// into the layer's gradient buffers and returning dL/d input.
    pub fn backward(&mut self, upstream: &Matrix, cache: &LayerCache) -> Result<Matrix> {
        if upstream.shape() != cache.preact.shape() {
            return Err(CoreError::shape(
                "DenseLayer::backward",
                format!("{}x{}", cache.preact.rows(), cache.preact.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let act = self.activation;
        // dL/dz = dL/dout * act'(z)
        let dz = match act {
            Activation::Identity => upstream.clone(),
            _ => {
                let mask = cache.preact.map(|z| act.grad_from_preact(z));
                upstream.hadamard(&mask)?
            }
        };
        self.grad_w.add_assign(&cache.input.matmul_tn(&dz)?)?;
        for (g, s) in self.grad_b.iter_mut().zip(dz.col_sums()) {
            *g += s;
        }
        dz.matmul_nt(&self.w)
    }

    pub fn zero_grads(&mut self) {
        self.grad_w.data_mut().fill(0.0);
        self.grad_b.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.w.data().len() + self.b.len()
    }
}
