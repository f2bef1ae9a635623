//! A stack of dense layers with a per-forward tape of layer caches.

use rand::rngs::StdRng;

use crate::error::Result;

use super::layer::{Activation, DenseLayer, LayerCache};
use super::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Tape of per-layer caches from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    caches: Vec<LayerCache>,
}

impl Mlp {
    /// Builds a stack over `dims = [in, h1, ..., out]`; hidden layers use
    /// `hidden_act`, the final layer `out_act`.
    pub fn new(dims: &[usize], hidden_act: Activation, out_act: Activation, rng: &mut StdRng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { out_act } else { hidden_act };
            layers.push(DenseLayer::new(dims[i], dims[i + 1], act, rng));
        }
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Self {
        assert!(!layers.is_empty());
        Mlp { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, MlpCache { caches }))
    }

    pub fn forward_only(&self, x: &Matrix) -> Result<Matrix> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward_only(&cur)?;
        }
        Ok(cur)
    }

    /// Backpropagates through the stack, accumulating parameter gradients,
    /// and returns dL/d input.
    pub fn backward(&mut self, upstream: &Matrix, cache: &MlpCache) -> Result<Matrix> {
        let mut grad = upstream.clone();
        for (layer, layer_cache) in self.layers.iter_mut().zip(&cache.caches).rev() {
            grad = layer.backward(&grad, layer_cache)?;
        }
        Ok(grad)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }
}
