//! Composite-loss assembly: forward pass with a tape of caches, and a
//! weighted backward pass over the same tape.
//!
//! The total is `rec + beta * ma + lambda * rep + iem_weight * iem`, where
//! `rec` already folds `alpha` into its KL terms. The backward pass takes an
//! independent weight per path so single components can be isolated for
//! gradient checking.

use crate::alignment::{wasserstein_backward, wasserstein_gaussian};
use crate::data::PairedBatch;
use crate::error::Result;
use crate::iem::{
    iem_loss, iem_loss_backward, shuffle_backward, shuffle_latents, IemCache, IemNet,
};
use crate::ndcore::rng::{seeded_rng, standard_normal};
use crate::ndcore::Matrix;
use crate::vae::{
    kl_backward, kl_diag_gaussian, reconstruction_backward, reconstruction_loss,
    reparameterize_backward, BranchForward, ReconLoss, VaeBranch,
};
use crate::vsa::{rep_backward, rep_forward, RepForward};

use super::{AcmrModel, LossWeights};

/// Externally drawn randomness for one training step, injectable for tests.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub eps_x: Matrix,
    pub eps_a: Matrix,
    /// One shuffle permutation per batch per step, shared by both
    /// modalities' negative pairs.
    pub perm: Vec<usize>,
}

impl StepNoise {
    /// Derives the step's noise from counters, so determinism survives
    /// changes in batch count or order of other draws.
    pub fn draw(seed: u64, epoch: usize, batch_idx: usize, batch_len: usize, latent_dim: usize) -> Self {
        let e = epoch as u64;
        let b = batch_idx as u64;
        let mut rng_x = seeded_rng(seed, "step_noise_x", &[e, b]);
        let mut rng_a = seeded_rng(seed, "step_noise_a", &[e, b]);
        let mut rng_p = seeded_rng(seed, "step_shuffle", &[e, b]);
        StepNoise {
            eps_x: standard_normal(batch_len, latent_dim, &mut rng_x),
            eps_a: standard_normal(batch_len, latent_dim, &mut rng_a),
            perm: crate::iem::draw_shuffle_perm(batch_len, &mut rng_p),
        }
    }
}

/// All loss components of one step. Components are reported unweighted;
/// `total` applies the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl_x: f64,
    pub kl_a: f64,
    /// `recon_x + recon_a + alpha * (kl_x + kl_a)`.
    pub rec: f64,
    pub ma: f64,
    pub rep: f64,
    pub iem: f64,
    pub total: f64,
}

struct IemPath {
    pos_scores: Vec<f64>,
    neg_scores: Vec<f64>,
    pos_cache: IemCache,
    neg_cache: IemCache,
}

/// Caches from one composite forward, consumed by `composite_backward`.
pub struct CompositeTape {
    fx: BranchForward,
    fa: BranchForward,
    rep: RepForward,
    iem_x: Option<IemPath>,
    iem_a: Option<IemPath>,
    perm: Vec<usize>,
}

fn iem_forward(net: &IemNet, inputs: &Matrix, z: &Matrix, perm: &[usize]) -> Result<(f64, IemPath)> {
    let (pos_scores, pos_cache) = net.joint_score_with_cache(inputs, z)?;
    let z_shuffled = shuffle_latents(z, perm)?;
    let (neg_scores, neg_cache) = net.joint_score_with_cache(inputs, &z_shuffled)?;
    let loss = iem_loss(&pos_scores, &neg_scores);
    Ok((
        loss,
        IemPath {
            pos_scores,
            neg_scores,
            pos_cache,
            neg_cache,
        },
    ))
}

/// Full forward pass over one paired batch.
pub fn composite_forward(
    model: &AcmrModel,
    batch: &PairedBatch,
    weights: &LossWeights,
    noise: &StepNoise,
    recon: ReconLoss,
    iem_enabled: bool,
) -> Result<(LossBreakdown, CompositeTape)> {
    let fx = model.visual.forward_train(&batch.x, &noise.eps_x)?;
    let fa = model.semantic.forward_train(&batch.a, &noise.eps_a)?;

    let recon_x = reconstruction_loss(&batch.x, &fx.recon, recon)?;
    let recon_a = reconstruction_loss(&batch.a, &fa.recon, recon)?;
    let kl_x = kl_diag_gaussian(&fx.lat);
    let kl_a = kl_diag_gaussian(&fa.lat);
    let rec = recon_x + recon_a + weights.alpha * (kl_x + kl_a);

    let ma = wasserstein_gaussian(&fx.lat, &fa.lat)?.value;

    let rep_fwd = rep_forward(&model.heads, &fx.z, &fa.z, &batch.seen_label_idx)?;
    let rep = rep_fwd.loss.total;

    let (iem, iem_x, iem_a) = if iem_enabled {
        let (loss_x, path_x) = iem_forward(&model.iem_visual, &batch.x, &fx.z, &noise.perm)?;
        let (loss_a, path_a) = iem_forward(&model.iem_semantic, &batch.a, &fa.z, &noise.perm)?;
        (loss_x + loss_a, Some(path_x), Some(path_a))
    } else {
        (0.0, None, None)
    };

    let total = rec + weights.beta * ma + weights.lambda * rep + weights.iem_weight * iem;
    Ok((
        LossBreakdown {
            recon_x,
            recon_a,
            kl_x,
            kl_a,
            rec,
            ma,
            rep,
            iem,
            total,
        },
        CompositeTape {
            fx,
            fa,
            rep: rep_fwd,
            iem_x,
            iem_a,
            perm: noise.perm.clone(),
        },
    ))
}

/// Per-path backward weights. Training uses [`BackwardWeights::training`];
/// component gradient checks isolate one path at a time.
#[derive(Debug, Clone, Copy)]
pub struct BackwardWeights {
    pub recon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub iem: f64,
}

impl BackwardWeights {
    pub fn training(w: &LossWeights) -> Self {
        BackwardWeights {
            recon: 1.0,
            alpha: w.alpha,
            beta: w.beta,
            lambda: w.lambda,
            iem: w.iem_weight,
        }
    }
}

fn iem_backward(
    net: &mut IemNet,
    path: &IemPath,
    perm: &[usize],
    weight: f64,
) -> Result<Matrix> {
    let (mut d_pos, mut d_neg) = iem_loss_backward(&path.pos_scores, &path.neg_scores);
    for v in d_pos.iter_mut().chain(d_neg.iter_mut()) {
        *v *= weight;
    }
    let d_z_pos = net.joint_score_backward(&d_pos, &path.pos_cache)?;
    let d_z_shuffled = net.joint_score_backward(&d_neg, &path.neg_cache)?;
    let mut d_z = d_z_pos;
    d_z.add_assign(&shuffle_backward(&d_z_shuffled, perm)?)?;
    Ok(d_z)
}

#[allow(clippy::too_many_arguments)]
fn branch_backward(
    branch: &mut VaeBranch,
    inputs: &Matrix,
    fwd: &BranchForward,
    noise: &Matrix,
    mut d_z: Matrix,
    d_mu_extra: Option<&Matrix>,
    d_logvar_extra: Option<&Matrix>,
    bw: &BackwardWeights,
    recon: ReconLoss,
) -> Result<()> {
    if bw.recon != 0.0 {
        let d_recon = reconstruction_backward(inputs, &fwd.recon, recon)?.scale(bw.recon);
        let d_z_dec = branch.decode_backward(&d_recon, &fwd.dec_cache)?;
        d_z.add_assign(&d_z_dec)?;
    }
    let (mut d_mu, mut d_logvar) = reparameterize_backward(&fwd.lat, noise, &d_z)?;
    if bw.alpha != 0.0 {
        let (d_mu_kl, d_logvar_kl) = kl_backward(&fwd.lat);
        d_mu.add_scaled_assign(&d_mu_kl, bw.alpha)?;
        d_logvar.add_scaled_assign(&d_logvar_kl, bw.alpha)?;
    }
    if let Some(extra) = d_mu_extra {
        d_mu.add_assign(extra)?;
    }
    if let Some(extra) = d_logvar_extra {
        d_logvar.add_assign(extra)?;
    }
    branch.encode_backward(&d_mu, &d_logvar, &fwd.enc_cache)?;
    Ok(())
}

/// Full backward pass. Gradients accumulate into the model's buffers; the
/// caller is responsible for zeroing them first.
pub fn composite_backward(
    model: &mut AcmrModel,
    batch: &PairedBatch,
    tape: &CompositeTape,
    noise: &StepNoise,
    bw: &BackwardWeights,
    recon: ReconLoss,
) -> Result<()> {
    let b = batch.len();
    let latent = tape.fx.z.cols();

    // Classifier heads; gradient into both latent sample batches.
    let (mut d_zx, mut d_za) = if bw.lambda != 0.0 {
        rep_backward(&mut model.heads, &tape.rep, bw.lambda)?
    } else {
        (Matrix::zeros(b, latent), Matrix::zeros(b, latent))
    };

    // Discriminators; gradient into latents through aligned and shuffled
    // pairs.
    if bw.iem != 0.0 {
        if let Some(path) = &tape.iem_x {
            d_zx.add_assign(&iem_backward(&mut model.iem_visual, path, &tape.perm, bw.iem)?)?;
        }
        if let Some(path) = &tape.iem_a {
            d_za.add_assign(&iem_backward(&mut model.iem_semantic, path, &tape.perm, bw.iem)?)?;
        }
    }

    // Alignment loss; gradient directly into the posteriors.
    let align = if bw.beta != 0.0 {
        let g = wasserstein_backward(&tape.fx.lat, &tape.fa.lat)?;
        Some((
            g.d_mu_x.scale(bw.beta),
            g.d_logvar_x.scale(bw.beta),
            g.d_mu_a.scale(bw.beta),
            g.d_logvar_a.scale(bw.beta),
        ))
    } else {
        None
    };
    let (d_mu_x, d_lv_x, d_mu_a, d_lv_a) = match &align {
        Some((a, b, c, d)) => (Some(a), Some(b), Some(c), Some(d)),
        None => (None, None, None, None),
    };

    branch_backward(
        &mut model.visual,
        &batch.x,
        &tape.fx,
        &noise.eps_x,
        d_zx,
        d_mu_x,
        d_lv_x,
        bw,
        recon,
    )?;
    branch_backward(
        &mut model.semantic,
        &batch.a,
        &tape.fa,
        &noise.eps_a,
        d_za,
        d_mu_a,
        d_lv_a,
        bw,
        recon,
    )?;
    Ok(())
}

/// Weighted sum of all loss terms plus components, without touching
/// gradients.
pub fn total_loss(
    model: &AcmrModel,
    batch: &PairedBatch,
    weights: &LossWeights,
    noise: &StepNoise,
    recon: ReconLoss,
    iem_enabled: bool,
) -> Result<LossBreakdown> {
    Ok(composite_forward(model, batch, weights, noise, recon, iem_enabled)?.0)
}
