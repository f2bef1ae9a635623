//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::layer::DenseLayer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    params: AdamParams,
}

impl AdamState {
    pub fn new(len: usize, params: AdamParams) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.params.lr
    }

    /// One bias-corrected update, in place. `name` identifies the parameter
    /// in the error raised for non-finite gradients.
    pub fn step(&mut self, name: &str, values: &mut [f64], grads: &[f64]) -> Result<()> {
        if values.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::shape(
                "adam_step",
                format!("{} entries", self.m.len()),
                format!("{} values / {} grads", values.len(), grads.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(CoreError::non_finite(format!(
                "gradient of {name} at index {i}"
            )));
        }
        self.t += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in values
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam states for the two tensors of a dense layer.
#[derive(Debug, Clone)]
pub struct LayerAdam {
    w: AdamState,
    b: AdamState,
}

impl LayerAdam {
    pub fn for_layer(layer: &DenseLayer, params: AdamParams) -> Self {
        LayerAdam {
            w: AdamState::new(layer.weights().data().len(), params),
            b: AdamState::new(layer.bias().len(), params),
        }
    }

    pub fn step(&mut self, name: &str, layer: &mut DenseLayer) -> Result<()> {
        let grad_w = layer.grad_w().data().to_vec();
        self.w
            .step(&format!("{name}.w"), layer.weights_mut().data_mut(), &grad_w)?;
        let grad_b = layer.grad_b().to_vec();
        self.b.step(&format!("{name}.b"), layer.bias_mut(), &grad_b)
    }

    pub fn lr(&self) -> f64 {
        self.w.lr()
    }
}
