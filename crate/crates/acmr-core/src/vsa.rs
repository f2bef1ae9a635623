//! Vision-Semantic Alignment: classifier heads on the latents of both
//! modalities. Their softmax cross-entropy over seen-class labels is the
//! representation loss that constrains the shared latent subspace; its
//! gradient into `z` is what lets the classifier guide the encoders.

use rand::rngs::StdRng;

use crate::error::{CoreError, Result};
use crate::ndcore::{Activation, DenseLayer, LayerCache, Matrix};

/// Two independent linear heads, one per modality, over seen classes.
#[derive(Debug, Clone)]
pub struct VsaHeads {
    pub head_x: DenseLayer,
    pub head_a: DenseLayer,
}

impl VsaHeads {
    pub fn new(latent_dim: usize, num_seen_classes: usize, rng: &mut StdRng) -> Self {
        VsaHeads {
            head_x: DenseLayer::new(latent_dim, num_seen_classes, Activation::Identity, rng),
            head_a: DenseLayer::new(latent_dim, num_seen_classes, Activation::Identity, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head_x.out_dim()
    }

    pub fn zero_grads(&mut self) {
        self.head_x.zero_grads();
        self.head_a.zero_grads();
    }
}

/// Raw logits for a latent batch; softmax happens inside the loss.
pub fn latent_classify(z: &Matrix, head: &DenseLayer) -> Result<Matrix> {
    head.forward_only(z)
}

/// Numerically stable batch-mean softmax cross-entropy. Returns the loss
/// and dL/d logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(CoreError::shape(
            "softmax_cross_entropy",
            format!("{} labels", logits.rows()),
            format!("{}", labels.len()),
        ));
    }
    let classes = logits.cols();
    let b = logits.rows();
    let bf = b as f64;
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(b, classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(CoreError::LabelOutOfRange {
                label: y,
                num_classes: classes,
            });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[y];
        let d_row = d_logits.row_mut(i);
        for (k, v) in row.iter().enumerate() {
            let softmax = (v - max).exp() / sum_exp;
            d_row[k] = (softmax - if k == y { 1.0 } else { 0.0 }) / bf;
        }
    }
    Ok((loss / bf, d_logits))
}

/// Argmax prediction per row; ties break to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RepLoss {
    pub total: f64,
    pub component_x: f64,
    pub component_a: f64,
}

/// Representation loss: mean cross-entropy of each head over the shared
/// seen-class labels, summed across the two heads.
pub fn rep_loss(z_x: &Matrix, z_a: &Matrix, labels: &[usize], heads: &VsaHeads) -> Result<RepLoss> {
    let logits_x = latent_classify(z_x, &heads.head_x)?;
    let logits_a = latent_classify(z_a, &heads.head_a)?;
    let (component_x, _) = softmax_cross_entropy(&logits_x, labels)?;
    let (component_a, _) = softmax_cross_entropy(&logits_a, labels)?;
    Ok(RepLoss {
        total: component_x + component_a,
        component_x,
        component_a,
    })
}

/// Training-time forward pass retaining head caches.
pub struct RepForward {
    pub loss: RepLoss,
    d_logits_x: Matrix,
    d_logits_a: Matrix,
    cache_x: LayerCache,
    cache_a: LayerCache,
}

pub fn rep_forward(
    heads: &VsaHeads,
    z_x: &Matrix,
    z_a: &Matrix,
    labels: &[usize],
) -> Result<RepForward> {
    let (logits_x, cache_x) = heads.head_x.forward(z_x)?;
    let (logits_a, cache_a) = heads.head_a.forward(z_a)?;
    let (component_x, d_logits_x) = softmax_cross_entropy(&logits_x, labels)?;
    let (component_a, d_logits_a) = softmax_cross_entropy(&logits_a, labels)?;
    Ok(RepForward {
        loss: RepLoss {
            total: component_x + component_a,
            component_x,
            component_a,
        },
        d_logits_x,
        d_logits_a,
        cache_x,
        cache_a,
    })
}

/// Backpropagates the representation loss scaled by `weight`, accumulating
/// head gradients and returning `(dL/dz_x, dL/dz_a)`.
pub fn rep_backward(heads: &mut VsaHeads, fwd: &RepForward, weight: f64) -> Result<(Matrix, Matrix)> {
    let d_zx = heads
        .head_x
        .backward(&fwd.d_logits_x.scale(weight), &fwd.cache_x)?;
    let d_za = heads
        .head_a
        .backward(&fwd.d_logits_a.scale(weight), &fwd.cache_a)?;
    Ok((d_zx, d_za))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::rng::{seeded_rng, standard_normal};

    #[test]
    fn zero_head_gives_uniform_logits() {
        let head = DenseLayer::zeros(3, 4, Activation::Identity);
        let z = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let logits = latent_classify(&z, &head).unwrap();
        assert_eq!(logits.row(0), &[0.0; 4]);
    }

    #[test]
    fn latent_classify_matches_loop_oracle() {
        let mut rng = seeded_rng(1, "vsa", &[]);
        let head = DenseLayer::new(4, 3, Activation::Identity, &mut rng);
        let z = standard_normal(2, 4, &mut rng);
        let logits = latent_classify(&z, &head).unwrap();
        let again = latent_classify(&z, &head).unwrap();
        assert_eq!(logits, again);
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = head.bias()[j];
                for k in 0..4 {
                    acc += z.get(i, k) * head.weights().get(k, j);
                }
                assert!((logits.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_logits_cost_ln_c_per_head() {
        let c = 10;
        let heads = VsaHeads {
            head_x: DenseLayer::zeros(4, c, Activation::Identity),
            head_a: DenseLayer::zeros(4, c, Activation::Identity),
        };
        let z = Matrix::zeros(6, 4);
        let labels = vec![3usize; 6];
        let loss = rep_loss(&z, &z, &labels, &heads).unwrap();
        let ln_c = (c as f64).ln();
        assert!((loss.component_x - ln_c).abs() < 1e-9);
        assert!((loss.component_a - ln_c).abs() < 1e-9);
        assert!((loss.total - 2.0 * ln_c).abs() < 1e-9);
        #[allow(clippy::approx_constant)]
        let quoted = 2.3026; // the documented four-digit value
        assert!((ln_c - quoted).abs() < 1e-4);
    }

    #[test]
    fn saturated_correct_class_costs_nothing() {
        let mut logits = Matrix::zeros(3, 4);
        for i in 0..3 {
            logits.set(i, 2, 30.0);
        }
        let (loss, _) = softmax_cross_entropy(&logits, &[2, 2, 2]).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp_oracle() {
        let mut rng = seeded_rng(2, "ce", &[]);
        let logits = standard_normal(5, 7, &mut rng);
        let labels = vec![0usize, 3, 6, 2, 5];
        let (got, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut want = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[y];
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_survives_huge_logits() {
        let logits = Matrix::from_rows(&[vec![1e4, -1e4, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.is_finite());
        let (loss2, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss2.is_finite() && loss2 > 1e4 - 1.0);
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(CoreError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn rep_loss_is_nonnegative() {
        let mut rng = seeded_rng(3, "repprop", &[]);
        let heads = VsaHeads::new(4, 5, &mut rng);
        for _ in 0..50 {
            let z = standard_normal(3, 4, &mut rng);
            let labels = vec![1usize, 4, 0];
            let loss = rep_loss(&z, &z, &labels, &heads).unwrap();
            assert!(loss.total >= 0.0);
        }
    }

    #[test]
    fn rep_gradients_match_finite_differences() {
        let mut rng = seeded_rng(4, "repfd", &[]);
        let mut heads = VsaHeads::new(3, 4, &mut rng);
        let z_x = standard_normal(5, 3, &mut rng);
        let z_a = standard_normal(5, 3, &mut rng);
        let labels = vec![0usize, 1, 2, 3, 1];

        let loss_at = |heads: &VsaHeads, z_x: &Matrix, z_a: &Matrix| -> f64 {
            rep_loss(z_x, z_a, &labels, heads).unwrap().total
        };

        heads.zero_grads();
        let fwd = rep_forward(&heads, &z_x, &z_a, &labels).unwrap();
        let (d_zx, d_za) = rep_backward(&mut heads, &fwd, 1.0).unwrap();

        let eps = 1e-6;
        let check = |analytic: f64, numeric: f64, what: &str| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                ((analytic - numeric) / denom).abs() < 1e-4,
                "{what}: analytic {analytic}, numeric {numeric}"
            );
        };

        let mut zp = z_x.clone();
        for p in 0..zp.data().len() {
            let orig = zp.data()[p];
            zp.data_mut()[p] = orig + eps;
            let plus = loss_at(&heads, &zp, &z_a);
            zp.data_mut()[p] = orig - eps;
            let minus = loss_at(&heads, &zp, &z_a);
            zp.data_mut()[p] = orig;
            check(d_zx.data()[p], (plus - minus) / (2.0 * eps), "z_x");
        }
        let mut zp = z_a.clone();
        for p in 0..zp.data().len() {
            let orig = zp.data()[p];
            zp.data_mut()[p] = orig + eps;
            let plus = loss_at(&heads, &z_x, &zp);
            zp.data_mut()[p] = orig - eps;
            let minus = loss_at(&heads, &z_x, &zp);
            zp.data_mut()[p] = orig;
            check(d_za.data()[p], (plus - minus) / (2.0 * eps), "z_a");
        }

        let analytic_w = heads.head_x.grad_w().clone();
        for p in 0..analytic_w.data().len() {
            let orig = heads.head_x.weights().data()[p];
            heads.head_x.weights_mut().data_mut()[p] = orig + eps;
            let plus = loss_at(&heads, &z_x, &z_a);
            heads.head_x.weights_mut().data_mut()[p] = orig - eps;
            let minus = loss_at(&heads, &z_x, &z_a);
            heads.head_x.weights_mut().data_mut()[p] = orig;
            check(analytic_w.data()[p], (plus - minus) / (2.0 * eps), "head_x.w");
        }
    }
}
