//! Gaussian-encoder / deterministic-decoder pair per modality.
//!
//! The encoder maps inputs to a diagonal-Gaussian posterior `(mu, logvar)`;
//! sampling uses the reparameterization `z = mu + exp(logvar/2) * eps` with
//! externally injected noise so training stays deterministic under a fixed
//! seed. The loss couples per-sample reconstruction distance with the
//! closed-form KL to a standard-normal prior, weighted by `alpha`.

use rand::rngs::StdRng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ndcore::{Activation, Matrix, Mlp, MlpCache};

/// `logvar` is clamped to this range before any exponentiation, bounding
/// `exp(logvar)` within `[e^-10, e^10]`.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Semantic,
}

/// Per-batch diagonal-Gaussian posterior. `logvar` is already clamped.
#[derive(Debug, Clone)]
pub struct GaussianLatent {
    pub mu: Matrix,
    pub logvar: Matrix,
}

impl GaussianLatent {
    pub fn new(mu: Matrix, logvar: Matrix) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(CoreError::shape(
                "GaussianLatent",
                format!("{}x{}", mu.rows(), mu.cols()),
                format!("{}x{}", logvar.rows(), logvar.cols()),
            ));
        }
        let logvar = logvar.map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok(GaussianLatent { mu, logvar })
    }

    pub fn batch_size(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    /// Per-dimension standard deviation `exp(logvar / 2)`.
    pub fn sigma(&self) -> Matrix {
        self.logvar.map(|v| (0.5 * v).exp())
    }
}

/// Reconstruction distance between an input batch and its decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    L1,
    L2,
}

#[derive(Debug, Clone)]
pub struct VaeBranch {
    pub encoder: Mlp, // input -> hidden -> 2*latent (mu | logvar)
    pub decoder: Mlp, // latent -> hidden -> input
    modality: Modality,
    latent_dim: usize,
}

/// Cache from `encode_with_cache`; holds the raw (pre-clamp) logvar so the
/// clamp's gradient mask can be reconstructed.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    mlp: MlpCache,
    raw_logvar: Matrix,
}

/// Everything the composite loss needs from one branch's forward pass.
#[derive(Debug)]
pub struct BranchForward {
    pub lat: GaussianLatent,
    pub z: Matrix,
    pub recon: Matrix,
    pub enc_cache: EncodeCache,
    pub dec_cache: MlpCache,
}

impl VaeBranch {
    pub fn new(
        input_dim: usize,
        enc_hidden: usize,
        dec_hidden: usize,
        latent_dim: usize,
        modality: Modality,
        hidden_act: Activation,
        rng: &mut StdRng,
    ) -> Self {
        let encoder = Mlp::new(
            &[input_dim, enc_hidden, 2 * latent_dim],
            hidden_act,
            Activation::Identity,
            rng,
        );
        let decoder = Mlp::new(
            &[latent_dim, dec_hidden, input_dim],
            hidden_act,
            Activation::Identity,
            rng,
        );
        VaeBranch {
            encoder,
            decoder,
            modality,
            latent_dim,
        }
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, modality: Modality) -> Self {
        let latent_dim = decoder.in_dim();
        VaeBranch {
            encoder,
            decoder,
            modality,
            latent_dim,
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    /// Encodes a batch to its posterior `(mu, logvar)`, logvar clamped.
    pub fn encode(&self, inputs: &Matrix) -> Result<GaussianLatent> {
        let out = self.encoder.forward_only(inputs)?;
        self.split_latent(out)
    }

    pub fn encode_with_cache(&self, inputs: &Matrix) -> Result<(GaussianLatent, EncodeCache)> {
        let (out, mlp) = self.encoder.forward(inputs)?;
        let raw_logvar = out.slice_cols(self.latent_dim, 2 * self.latent_dim)?;
        let lat = self.split_latent(out)?;
        Ok((lat, EncodeCache { mlp, raw_logvar }))
    }

    fn split_latent(&self, enc_out: Matrix) -> Result<GaussianLatent> {
        let mu = enc_out.slice_cols(0, self.latent_dim)?;
        let logvar = enc_out.slice_cols(self.latent_dim, 2 * self.latent_dim)?;
        GaussianLatent::new(mu, logvar)
    }

    /// Backpropagates posterior gradients into the encoder. Coordinates where
    /// the clamp was active receive zero gradient.
    pub fn encode_backward(
        &mut self,
        d_mu: &Matrix,
        d_logvar: &Matrix,
        cache: &EncodeCache,
    ) -> Result<Matrix> {
        let masked = d_logvar.hadamard(&cache.raw_logvar.map(|v| {
            if v.abs() < LOGVAR_CLAMP {
                1.0
            } else {
                0.0
            }
        }))?;
        let upstream = d_mu.hcat(&masked)?;
        self.encoder.backward(&upstream, &cache.mlp)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward_only(z)
    }

    pub fn decode_with_cache(&self, z: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.decoder.forward(z)
    }

    /// Backpropagates reconstruction gradients, returning dL/dz.
    pub fn decode_backward(&mut self, d_recon: &Matrix, cache: &MlpCache) -> Result<Matrix> {
        self.decoder.backward(d_recon, cache)
    }

    /// Full training-time forward: encode, sample with the given noise,
    /// decode. All caches are retained.
    pub fn forward_train(&self, inputs: &Matrix, noise: &Matrix) -> Result<BranchForward> {
        let (lat, enc_cache) = self.encode_with_cache(inputs)?;
        let z = reparameterize(&lat, noise)?;
        let (recon, dec_cache) = self.decode_with_cache(&z)?;
        Ok(BranchForward {
            lat,
            z,
            recon,
            enc_cache,
            dec_cache,
        })
    }

    pub fn zero_grads(&mut self) {
        self.encoder.zero_grads();
        self.decoder.zero_grads();
    }
}

/// `z = mu + exp(logvar/2) * noise`, the reparameterized sample.
pub fn reparameterize(lat: &GaussianLatent, noise: &Matrix) -> Result<Matrix> {
    if noise.shape() != lat.mu.shape() {
        return Err(CoreError::shape(
            "reparameterize",
            format!("{}x{}", lat.mu.rows(), lat.mu.cols()),
            format!("{}x{}", noise.rows(), noise.cols()),
        ));
    }
    lat.mu.add(&lat.sigma().hadamard(noise)?)
}

/// Gradients of the reparameterized sample: given dL/dz, returns
/// `(dL/dmu, dL/dlogvar)` where dz/dmu = 1 and
/// dz/dlogvar = 0.5 * exp(logvar/2) * noise.
pub fn reparameterize_backward(
    lat: &GaussianLatent,
    noise: &Matrix,
    d_z: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let d_mu = d_z.clone();
    let d_logvar = d_z.hadamard(noise)?.hadamard(&lat.sigma())?.scale(0.5);
    Ok((d_mu, d_logvar))
}

/// Batch-mean KL divergence from the posterior to the standard-normal
/// prior: `mean_i 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_diag_gaussian(lat: &GaussianLatent) -> f64 {
    let b = lat.batch_size() as f64;
    let mut total = 0.0;
    for (m, lv) in lat.mu.data().iter().zip(lat.logvar.data()) {
        total += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    total / b
}

/// Gradients of `kl_diag_gaussian` with respect to `(mu, logvar)`.
pub fn kl_backward(lat: &GaussianLatent) -> (Matrix, Matrix) {
    let b = lat.batch_size() as f64;
    let d_mu = lat.mu.scale(1.0 / b);
    let d_logvar = lat.logvar.map(|lv| 0.5 * (lv.exp() - 1.0) / b);
    (d_mu, d_logvar)
}

/// Batch-mean KL per latent dimension (column), used by collapse
/// diagnostics.
pub fn kl_per_dimension(lat: &GaussianLatent) -> Vec<f64> {
    let b = lat.batch_size() as f64;
    let d = lat.dim();
    let mut per_dim = vec![0.0; d];
    for r in 0..lat.batch_size() {
        let mu_row = lat.mu.row(r);
        let lv_row = lat.logvar.row(r);
        for (k, (m, lv)) in mu_row.iter().zip(lv_row).enumerate() {
            per_dim[k] += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
    }
    for v in &mut per_dim {
        *v /= b;
    }
    per_dim
}

/// Mean over the batch of the per-sample reconstruction distance.
pub fn reconstruction_loss(x: &Matrix, x_hat: &Matrix, mode: ReconLoss) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(CoreError::shape(
            "reconstruction_loss",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", x_hat.rows(), x_hat.cols()),
        ));
    }
    let b = x.rows() as f64;
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| match mode {
            ReconLoss::L1 => (a - b).abs(),
            ReconLoss::L2 => (a - b) * (a - b),
        })
        .sum();
    Ok(total / b)
}

/// dL/d x_hat for `reconstruction_loss`.
pub fn reconstruction_backward(x: &Matrix, x_hat: &Matrix, mode: ReconLoss) -> Result<Matrix> {
    if x.shape() != x_hat.shape() {
        return Err(CoreError::shape(
            "reconstruction_backward",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", x_hat.rows(), x_hat.cols()),
        ));
    }
    let b = x.rows() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for ((o, xv), hv) in out.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        *o = match mode {
            ReconLoss::L1 => {
                let d = hv - xv;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            ReconLoss::L2 => 2.0 * (hv - xv),
        } / b;
    }
    Ok(out)
}

/// Components of the two-branch VAE loss.
#[derive(Debug, Clone, Copy)]
pub struct VaeLossBreakdown {
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl_x: f64,
    pub kl_a: f64,
    pub total: f64,
}

/// Minimized two-branch VAE loss:
/// `recon_x + recon_a + alpha * (kl_x + kl_a)`.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss(
    x_batch: &Matrix,
    a_batch: &Matrix,
    visual: &VaeBranch,
    semantic: &VaeBranch,
    alpha: f64,
    noise_x: &Matrix,
    noise_a: &Matrix,
    mode: ReconLoss,
) -> Result<VaeLossBreakdown> {
    let fx = visual.forward_train(x_batch, noise_x)?;
    let fa = semantic.forward_train(a_batch, noise_a)?;
    let recon_x = reconstruction_loss(x_batch, &fx.recon, mode)?;
    let recon_a = reconstruction_loss(a_batch, &fa.recon, mode)?;
    let kl_x = kl_diag_gaussian(&fx.lat);
    let kl_a = kl_diag_gaussian(&fa.lat);
    Ok(VaeLossBreakdown {
        recon_x,
        recon_a,
        kl_x,
        kl_a,
        total: recon_x + recon_a + alpha * (kl_x + kl_a),
    })
}
