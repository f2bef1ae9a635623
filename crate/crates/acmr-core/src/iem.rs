//! Information Enhancement Module.
//!
//! A per-modality score network reads a concatenated (input, latent) pair
//! and emits an unbounded scalar. Aligned pairs are pushed toward high
//! scores and within-batch shuffled pairs toward low scores with a
//! Jensen-Shannon discriminator objective, minimized jointly over the score
//! network and the encoder. This magnifies the joint probability between
//! observations and their latents and counteracts posterior collapse.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;

use crate::error::{CoreError, Result};
use crate::ndcore::{Activation, Matrix, Mlp, MlpCache};
use crate::vae::{kl_per_dimension, GaussianLatent};

#[derive(Debug, Clone)]
pub struct IemNet {
    score_mlp: Mlp, // (input_dim + latent_dim) -> hidden -> 1
    input_dim: usize,
    latent_dim: usize,
}

#[derive(Debug)]
pub struct IemCache {
    mlp: MlpCache,
    input_dim: usize,
}

impl IemNet {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden: usize,
        hidden_act: Activation,
        rng: &mut StdRng,
    ) -> Self {
        let score_mlp = Mlp::new(
            &[input_dim + latent_dim, hidden, 1],
            hidden_act,
            Activation::Identity,
            rng,
        );
        IemNet {
            score_mlp,
            input_dim,
            latent_dim,
        }
    }

    pub fn from_parts(score_mlp: Mlp, input_dim: usize) -> Self {
        let latent_dim = score_mlp.in_dim() - input_dim;
        IemNet {
            score_mlp,
            input_dim,
            latent_dim,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.score_mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.score_mlp
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn check_pair(&self, inputs: &Matrix, z: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim || z.cols() != self.latent_dim || inputs.rows() != z.rows()
        {
            return Err(CoreError::shape(
                "joint_score",
                format!("B x {} inputs with B x {} latents", self.input_dim, self.latent_dim),
                format!(
                    "{}x{} inputs with {}x{} latents",
                    inputs.rows(),
                    inputs.cols(),
                    z.rows(),
                    z.cols()
                ),
            ));
        }
        Ok(())
    }

    /// Scores each (input, latent) row pair.
    pub fn joint_score(&self, inputs: &Matrix, z: &Matrix) -> Result<Vec<f64>> {
        self.check_pair(inputs, z)?;
        let out = self.score_mlp.forward_only(&inputs.hcat(z)?)?;
        Ok(out.data().to_vec())
    }

    pub fn joint_score_with_cache(&self, inputs: &Matrix, z: &Matrix) -> Result<(Vec<f64>, IemCache)> {
        self.check_pair(inputs, z)?;
        let (out, mlp) = self.score_mlp.forward(&inputs.hcat(z)?)?;
        Ok((
            out.data().to_vec(),
            IemCache {
                mlp,
                input_dim: self.input_dim,
            },
        ))
    }

    /// Backpropagates per-sample score gradients; accumulates score-network
    /// parameter gradients and returns dL/dz (the input part is dropped:
    /// raw features are data, not parameters).
    pub fn joint_score_backward(&mut self, d_scores: &[f64], cache: &IemCache) -> Result<Matrix> {
        let upstream = Matrix::from_vec(d_scores.len(), 1, d_scores.to_vec())?;
        let d_concat = self.score_mlp.backward(&upstream, &cache.mlp)?;
        d_concat.slice_cols(cache.input_dim, cache.input_dim + self.latent_dim)
    }

    pub fn zero_grads(&mut self) {
        self.score_mlp.zero_grads();
    }
}

/// Applies `perm` to the rows of `z`: row `i` of the output is row
/// `perm[i]` of the input.
pub fn shuffle_latents(z: &Matrix, perm: &[usize]) -> Result<Matrix> {
    if perm.len() != z.rows() {
        return Err(CoreError::shape(
            "shuffle_latents",
            format!("permutation of length {}", z.rows()),
            format!("{}", perm.len()),
        ));
    }
    z.gather_rows(perm)
}

/// Scatters gradients of the shuffled rows back to their source rows.
pub fn shuffle_backward(d_shuffled: &Matrix, perm: &[usize]) -> Result<Matrix> {
    if perm.len() != d_shuffled.rows() {
        return Err(CoreError::shape(
            "shuffle_backward",
            format!("permutation of length {}", d_shuffled.rows()),
            format!("{}", perm.len()),
        ));
    }
    let mut out = Matrix::zeros(d_shuffled.rows(), d_shuffled.cols());
    for (i, &src) in perm.iter().enumerate() {
        let row = d_shuffled.row(i).to_vec();
        for (o, v) in out.row_mut(src).iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(out)
}

/// Draws a random permutation, retrying a few times to avoid fixed points.
/// For tiny batches a fixed point may remain; that only weakens a few
/// negative pairs, it does not break the objective.
pub fn draw_shuffle_perm(batch: usize, rng: &mut StdRng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..batch).collect();
    for _ in 0..8 {
        perm.shuffle(rng);
        if batch > 1 && perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    perm
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Jensen-Shannon discriminator loss over aligned and shuffled pair scores:
/// `mean_i [ -log sigma(pos_i) - log(1 - sigma(neg_i)) ]`.
pub fn iem_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    debug_assert_eq!(pos_scores.len(), neg_scores.len());
    let b = pos_scores.len().max(1) as f64;
    let total: f64 = pos_scores
        .iter()
        .map(|&p| softplus(-p))
        .chain(neg_scores.iter().map(|&n| softplus(n)))
        .sum();
    total / b
}

/// Gradients of [`iem_loss`] with respect to the two score vectors.
pub fn iem_loss_backward(pos_scores: &[f64], neg_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let b = pos_scores.len().max(1) as f64;
    let d_pos = pos_scores.iter().map(|&p| (sigmoid(p) - 1.0) / b).collect();
    let d_neg = neg_scores.iter().map(|&n| sigmoid(n) / b).collect();
    (d_pos, d_neg)
}

#[derive(Debug, Clone)]
pub struct CollapseDiagnostics {
    pub active_units: usize,
    pub kl_per_dim: Vec<f64>,
}

/// Counts latent dimensions whose batch-mean KL exceeds `threshold`.
pub fn collapse_diagnostics(lat: &GaussianLatent, threshold: f64) -> CollapseDiagnostics {
    let kl_per_dim = kl_per_dimension(lat);
    let active_units = kl_per_dim.iter().filter(|&&v| v > threshold).count();
    CollapseDiagnostics {
        active_units,
        kl_per_dim,
    }
}
