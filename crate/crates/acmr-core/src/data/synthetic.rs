//! Synthetic cross-modal dataset generator.
//!
//! Each class gets a standard-normal attribute vector; a fixed seeded
//! linear map sends attributes to visual prototypes, and instances are
//! prototypes plus isotropic noise. The attribute-to-visual relationship is
//! linear on purpose: it is learnable by the MLP stack, which makes
//! end-to-end thresholds on this data meaningful.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ndcore::rng::{seeded_rng, standard_normal};
use crate::ndcore::Matrix;

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub d_visual: usize,
    pub d_attr: usize,
    pub samples_per_class: usize,
    pub prototype_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_seen: 8,
            num_unseen: 4,
            d_visual: 64,
            d_attr: 16,
            samples_per_class: 50,
            prototype_noise: 0.1,
            seed: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.num_seen, "num_seen"),
            (self.num_unseen, "num_unseen"),
            (self.d_visual, "d_visual"),
            (self.d_attr, "d_attr"),
            (self.samples_per_class, "samples_per_class"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name} must be at least 1"),
                });
            }
        }
        if self.prototype_noise <= 0.0 || !self.prototype_noise.is_finite() {
            return Err(CoreError::InvalidSpec {
                detail: format!("prototype_noise must be positive, got {}", self.prototype_noise),
            });
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_seen + self.num_unseen
    }
}

/// Deterministically generates a dataset from the spec. Seen-class
/// instances are split 80/20 per class into train/test_seen; unseen-class
/// instances all land in test_unseen.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.num_classes();
    let n = c * spec.samples_per_class;

    let mut attr_rng = seeded_rng(spec.seed, "synthetic_attributes", &[]);
    let attributes = standard_normal(c, spec.d_attr, &mut attr_rng);

    // Attribute-to-visual map with N(0, 1/d_attr) entries, so prototype
    // coordinates have roughly unit variance.
    let mut map_rng = seeded_rng(spec.seed, "synthetic_map", &[]);
    let map = standard_normal(spec.d_attr, spec.d_visual, &mut map_rng)
        .scale(1.0 / (spec.d_attr as f64).sqrt());

    let prototypes = attributes.matmul(&map)?;

    let mut visual = Matrix::zeros(n, spec.d_visual);
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        let mut inst_rng = seeded_rng(spec.seed, "synthetic_instances", &[class as u64]);
        let noise = standard_normal(spec.samples_per_class, spec.d_visual, &mut inst_rng);
        for s in 0..spec.samples_per_class {
            let i = class * spec.samples_per_class + s;
            let row = visual.row_mut(i);
            for (k, v) in row.iter_mut().enumerate() {
                *v = prototypes.get(class, k) + spec.prototype_noise * noise.get(s, k);
            }
            labels.push(class);
        }
    }

    let seen_classes: Vec<usize> = (0..spec.num_seen).collect();
    let unseen_classes: Vec<usize> = (spec.num_seen..c).collect();

    let mut train_idx = Vec::new();
    let mut test_seen_idx = Vec::new();
    let mut test_unseen_idx = Vec::new();
    for class in 0..c {
        let start = class * spec.samples_per_class;
        let end = start + spec.samples_per_class;
        if class < spec.num_seen {
            let train_count = ((spec.samples_per_class * 4) / 5).max(1);
            train_idx.extend(start..start + train_count);
            test_seen_idx.extend(start + train_count..end);
        } else {
            test_unseen_idx.extend(start..end);
        }
    }

    Dataset::new(
        visual,
        attributes,
        labels,
        seen_classes,
        unseen_classes,
        train_idx,
        test_seen_idx,
        test_unseen_idx,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_split;

    #[test]
    fn counts_follow_the_spec() {
        let spec = SyntheticSpec {
            num_seen: 8,
            num_unseen: 4,
            samples_per_class: 50,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.num_instances(), 600);
        assert_eq!(ds.num_classes(), 12);
        assert_eq!(ds.train_idx().len(), 8 * 40);
        assert_eq!(ds.test_seen_idx().len(), 8 * 10);
        assert_eq!(ds.test_unseen_idx().len(), 4 * 50);
        assert!(validate_split(&ds).all_passed());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        let ia: Vec<usize> = (0..a.num_instances()).collect();
        assert_eq!(
            a.gather_visual(&ia).unwrap().data(),
            b.gather_visual(&ia).unwrap().data()
        );
        assert_eq!(a.attributes().data(), b.attributes().data());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn vanishing_noise_collapses_within_class_variance() {
        let spec = SyntheticSpec {
            prototype_noise: 1e-9,
            samples_per_class: 10,
            num_seen: 2,
            num_unseen: 1,
            d_visual: 8,
            d_attr: 4,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        // All instances of class 0.
        let idx: Vec<usize> = (0..10).collect();
        let x = ds.gather_visual(&idx).unwrap();
        for k in 0..8 {
            let mean: f64 = (0..10).map(|r| x.get(r, k)).sum::<f64>() / 10.0;
            let var: f64 = (0..10).map(|r| (x.get(r, k) - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(var < 1e-16, "dim {k} variance {var}");
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let no_noise = SyntheticSpec {
            prototype_noise: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&no_noise).is_err());
        let no_seen = SyntheticSpec {
            num_seen: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&no_seen).is_err());
    }
}
