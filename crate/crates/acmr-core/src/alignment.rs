//! Cross-modal mutual-alignment loss.
//!
//! The 2-Wasserstein distance between two diagonal Gaussians reduces to the
//! Euclidean distance between their `(mu, sigma)` vectors:
//! `sqrt(||mu_x - mu_a||^2 + ||sigma_x - sigma_a||^2)` with
//! `sigma = exp(logvar/2)`. The loss is this distance per paired sample,
//! averaged over the batch.

use crate::error::{CoreError, Result};
use crate::ndcore::Matrix;
use crate::vae::GaussianLatent;

/// Stabilizer added inside the square root of the *gradient* denominator.
/// The forward value stays exact (0 for identical latents).
pub const WASSERSTEIN_GRAD_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AlignmentLoss {
    pub value: f64,
    pub per_sample: Vec<f64>,
}

fn check_shapes(lx: &GaussianLatent, la: &GaussianLatent) -> Result<()> {
    if lx.mu.shape() != la.mu.shape() {
        return Err(CoreError::shape(
            "wasserstein_gaussian",
            format!("{}x{}", lx.mu.rows(), lx.mu.cols()),
            format!("{}x{}", la.mu.rows(), la.mu.cols()),
        ));
    }
    Ok(())
}

/// Squared distance per sample: `sum_d (mu_x-mu_a)^2 + (sigma_x-sigma_a)^2`.
fn squared_per_sample(lx: &GaussianLatent, la: &GaussianLatent) -> Vec<f64> {
    let b = lx.batch_size();
    let sx = lx.sigma();
    let sa = la.sigma();
    let mut sq = Vec::with_capacity(b);
    for i in 0..b {
        let mut s = 0.0;
        for (mx, ma) in lx.mu.row(i).iter().zip(la.mu.row(i)) {
            let d = mx - ma;
            s += d * d;
        }
        for (x, a) in sx.row(i).iter().zip(sa.row(i)) {
            let d = x - a;
            s += d * d;
        }
        sq.push(s);
    }
    sq
}

/// Closed-form 2-Wasserstein distance per paired sample, averaged over the
/// batch. Exactly zero when the two posteriors match element-wise.
pub fn wasserstein_gaussian(lx: &GaussianLatent, la: &GaussianLatent) -> Result<AlignmentLoss> {
    check_shapes(lx, la)?;
    let per_sample: Vec<f64> = squared_per_sample(lx, la)
        .into_iter()
        .map(|s| if s == 0.0 { 0.0 } else { s.sqrt() })
        .collect();
    let value = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    Ok(AlignmentLoss { value, per_sample })
}

/// Gradients of `wasserstein_gaussian` with respect to both posteriors.
#[derive(Debug, Clone)]
pub struct AlignmentGrads {
    pub d_mu_x: Matrix,
    pub d_logvar_x: Matrix,
    pub d_mu_a: Matrix,
    pub d_logvar_a: Matrix,
}

/// Analytic gradient of the batch-mean Wasserstein loss. The denominator is
/// stabilized with [`WASSERSTEIN_GRAD_EPS`], so it is defined everywhere and
/// matches finite differences away from the zero-distance point.
pub fn wasserstein_backward(lx: &GaussianLatent, la: &GaussianLatent) -> Result<AlignmentGrads> {
    check_shapes(lx, la)?;
    let b = lx.batch_size();
    let d = lx.dim();
    let sx = lx.sigma();
    let sa = la.sigma();
    let sq = squared_per_sample(lx, la);

    let mut d_mu_x = Matrix::zeros(b, d);
    let mut d_logvar_x = Matrix::zeros(b, d);
    let mut d_mu_a = Matrix::zeros(b, d);
    let mut d_logvar_a = Matrix::zeros(b, d);

    let bf = b as f64;
    for (i, s) in sq.iter().enumerate() {
        let inv = 1.0 / (s + WASSERSTEIN_GRAD_EPS).sqrt();
        for k in 0..d {
            let dmu = lx.mu.get(i, k) - la.mu.get(i, k);
            let g_mu = dmu * inv / bf;
            d_mu_x.set(i, k, g_mu);
            d_mu_a.set(i, k, -g_mu);

            // d sigma / d logvar = sigma / 2
            let dsig = sx.get(i, k) - sa.get(i, k);
            d_logvar_x.set(i, k, dsig * 0.5 * sx.get(i, k) * inv / bf);
            d_logvar_a.set(i, k, -dsig * 0.5 * sa.get(i, k) * inv / bf);
        }
    }
    Ok(AlignmentGrads {
        d_mu_x,
        d_logvar_x,
        d_mu_a,
        d_logvar_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::rng::{seeded_rng, standard_normal};
    use crate::ndcore::Matrix;

    fn random_latent(rows: usize, cols: usize, seed: u64) -> GaussianLatent {
        let mut rng = seeded_rng(seed, "align", &[]);
        GaussianLatent::new(
            standard_normal(rows, cols, &mut rng),
            standard_normal(rows, cols, &mut rng),
        )
        .unwrap()
    }

    #[test]
    fn identical_latents_give_exact_zero() {
        let lat = random_latent(4, 6, 1);
        let loss = wasserstein_gaussian(&lat, &lat).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.per_sample.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_gap_with_equal_variances_is_euclidean() {
        // mu gap (3, 4, 0, ...) with equal logvar: sigma terms cancel, so the
        // distance is the 3-4-5 norm.
        let d = 5;
        let mut mu_x = Matrix::zeros(1, d);
        mu_x.set(0, 0, 3.0);
        mu_x.set(0, 1, 4.0);
        let logvar = Matrix::filled(1, d, 0.37).unwrap();
        let lx = GaussianLatent::new(mu_x, logvar.clone()).unwrap();
        let la = GaussianLatent::new(Matrix::zeros(1, d), logvar).unwrap();
        let loss = wasserstein_gaussian(&lx, &la).unwrap();
        assert!((loss.value - 5.0).abs() < 1e-10);
    }

    #[test]
    fn sigma_gap_single_dimension() {
        // Equal means; logvar_x = ln 16 vs 0 gives |4 - 1| = 3.
        let lx = GaussianLatent::new(
            Matrix::zeros(1, 1),
            Matrix::filled(1, 1, 16.0_f64.ln()).unwrap(),
        )
        .unwrap();
        let la = GaussianLatent::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap();
        let loss = wasserstein_gaussian(&lx, &la).unwrap();
        assert!((loss.value - 3.0).abs() < 1e-10);
    }

    #[test]
    fn symmetry_is_exact() {
        for seed in 0..50 {
            let a = random_latent(3, 4, seed * 2);
            let b = random_latent(3, 4, seed * 2 + 1);
            let ab = wasserstein_gaussian(&a, &b).unwrap();
            let ba = wasserstein_gaussian(&b, &a).unwrap();
            assert_eq!(ab.value, ba.value);
            assert_eq!(ab.per_sample, ba.per_sample);
        }
    }

    #[test]
    fn nonnegative_and_zero_iff_equal() {
        for seed in 0..1000 {
            let a = random_latent(1, 4, seed * 2);
            let b = random_latent(1, 4, seed * 2 + 1);
            let loss = wasserstein_gaussian(&a, &b).unwrap();
            assert!(loss.value >= 0.0);
            let equal = a.mu == b.mu && a.logvar == b.logvar;
            assert_eq!(loss.value == 0.0, equal);
        }
    }

    #[test]
    fn triangle_inequality_holds() {
        for seed in 0..1000 {
            let p = random_latent(1, 3, seed * 3);
            let q = random_latent(1, 3, seed * 3 + 1);
            let r = random_latent(1, 3, seed * 3 + 2);
            let pr = wasserstein_gaussian(&p, &r).unwrap().value;
            let pq = wasserstein_gaussian(&p, &q).unwrap().value;
            let qr = wasserstein_gaussian(&q, &r).unwrap().value;
            assert!(pr <= pq + qr + 1e-12, "{pr} > {pq} + {qr}");
        }
    }

    #[test]
    fn value_is_mean_of_per_sample() {
        let a = random_latent(7, 5, 91);
        let b = random_latent(7, 5, 92);
        let loss = wasserstein_gaussian(&a, &b).unwrap();
        let mean = loss.per_sample.iter().sum::<f64>() / 7.0;
        assert!((loss.value - mean).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences_away_from_zero() {
        let lx = random_latent(3, 4, 101);
        let la = random_latent(3, 4, 102);
        let base = wasserstein_gaussian(&lx, &la).unwrap();
        assert!(base.per_sample.iter().all(|v| *v > 1e-3));

        let grads = wasserstein_backward(&lx, &la).unwrap();
        let eps = 1e-6;

        let loss_at = |mu_x: &Matrix, lv_x: &Matrix, mu_a: &Matrix, lv_a: &Matrix| -> f64 {
            let lx = GaussianLatent::new(mu_x.clone(), lv_x.clone()).unwrap();
            let la = GaussianLatent::new(mu_a.clone(), lv_a.clone()).unwrap();
            wasserstein_gaussian(&lx, &la).unwrap().value
        };

        let cases: [(&Matrix, &Matrix); 4] = [
            (&lx.mu, &grads.d_mu_x),
            (&lx.logvar, &grads.d_logvar_x),
            (&la.mu, &grads.d_mu_a),
            (&la.logvar, &grads.d_logvar_a),
        ];
        for (ci, (values, analytic)) in cases.into_iter().enumerate() {
            for p in 0..values.data().len() {
                let mut v = values.clone();
                v.data_mut()[p] += eps;
                let plus = match ci {
                    0 => loss_at(&v, &lx.logvar, &la.mu, &la.logvar),
                    1 => loss_at(&lx.mu, &v, &la.mu, &la.logvar),
                    2 => loss_at(&lx.mu, &lx.logvar, &v, &la.logvar),
                    _ => loss_at(&lx.mu, &lx.logvar, &la.mu, &v),
                };
                v.data_mut()[p] -= 2.0 * eps;
                let minus = match ci {
                    0 => loss_at(&v, &lx.logvar, &la.mu, &la.logvar),
                    1 => loss_at(&lx.mu, &v, &la.mu, &la.logvar),
                    2 => loss_at(&lx.mu, &lx.logvar, &v, &la.logvar),
                    _ => loss_at(&lx.mu, &lx.logvar, &la.mu, &v),
                };
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic.data()[p];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-4,
                    "case {ci} coord {p}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }
}
