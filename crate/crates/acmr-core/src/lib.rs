//! Cross-modal VAE alignment for generalized zero-shot classification.
//!
//! Two Gaussian-posterior VAEs (one per modality) are trained jointly with a
//! closed-form Wasserstein alignment loss between their latent distributions,
//! a joint-score discriminator that keeps latents informative about their
//! inputs, and classifier heads that constrain the shared latent subspace.
//! The aligned latents then train a softmax classifier covering both seen
//! and unseen classes, evaluated with per-class accuracies and their
//! harmonic mean.
//!
//! Everything runs on `f64` with hand-written backward passes, checkable
//! against central finite differences, and is bit-reproducible for a fixed
//! seed regardless of thread count.

pub mod alignment;
pub mod data;
pub mod error;
pub mod eval;
pub mod iem;
pub mod ndcore;
pub mod trainer;
pub mod vae;
pub mod vsa;

pub use error::{CoreError, Result};
