//! Numerical substrate: dense matrices, MLP layers with explicit
//! backpropagation, Adam, seeded RNG plumbing, and a finite-difference
//! gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod mlp;
pub mod rng;

pub use adam::{AdamParams, AdamState, LayerAdam};
pub use gradcheck::{gradient_check, GradCheckReport, ParamBlock, ParamBlocks};
pub use layer::{Activation, DenseLayer, LayerCache};
pub use matrix::Matrix;
pub use mlp::{Mlp, MlpCache};
pub use rng::{mix_seed, seeded_rng, standard_normal};
