//! Dataset model, file ingestion, split validation, and paired batching.
//!
//! A [`Dataset`] holds the instance feature matrix, the per-class attribute
//! matrix, labels, and the seen/unseen split. Visual feature rows are only
//! reachable through audited accessors, so a test can prove that training
//! never touched an unseen-class image.

pub mod formats;
pub mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{CoreError, Result};
use crate::ndcore::Matrix;

pub use formats::SplitFile;
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Per-instance read counters for visual feature rows.
#[derive(Debug)]
pub struct AccessAudit {
    reads: Vec<AtomicU64>,
}

impl AccessAudit {
    fn new(n: usize) -> Self {
        AccessAudit {
            reads: (0..n).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    fn record(&self, i: usize) {
        self.reads[i].fetch_add(1, Ordering::Relaxed);
    }

    pub fn reads(&self, i: usize) -> u64 {
        self.reads[i].load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for r in &self.reads {
            r.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Debug)]
pub struct Dataset {
    visual: Matrix,     // N x D_I
    attributes: Matrix, // C x D_A
    labels: Vec<usize>,
    seen_classes: BTreeSet<usize>,
    unseen_classes: BTreeSet<usize>,
    seen_sorted: Vec<usize>,
    train_idx: Vec<usize>,
    test_seen_idx: Vec<usize>,
    test_unseen_idx: Vec<usize>,
    audit: AccessAudit,
}

impl Dataset {
    /// Builds and validates a dataset. The first failing invariant is
    /// returned as its distinct error kind.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        visual: Matrix,
        attributes: Matrix,
        labels: Vec<usize>,
        seen_classes: Vec<usize>,
        unseen_classes: Vec<usize>,
        train_idx: Vec<usize>,
        test_seen_idx: Vec<usize>,
        test_unseen_idx: Vec<usize>,
    ) -> Result<Self> {
        if labels.len() != visual.rows() {
            return Err(CoreError::HeaderMismatch {
                detail: format!(
                    "{} labels for {} feature rows",
                    labels.len(),
                    visual.rows()
                ),
            });
        }
        let n = visual.rows();
        let seen: BTreeSet<usize> = seen_classes.into_iter().collect();
        let unseen: BTreeSet<usize> = unseen_classes.into_iter().collect();
        let seen_sorted: Vec<usize> = seen.iter().copied().collect();
        let ds = Dataset {
            visual,
            attributes,
            labels,
            seen_classes: seen,
            unseen_classes: unseen,
            seen_sorted,
            train_idx,
            test_seen_idx,
            test_unseen_idx,
            audit: AccessAudit::new(n),
        };
        let report = validate_split(&ds);
        if let Some(check) = report.checks.iter().find(|c| !c.passed) {
            return Err(check.to_error());
        }
        Ok(ds)
    }

    pub fn num_instances(&self) -> usize {
        self.visual.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn d_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn d_attr(&self) -> usize {
        self.attributes.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn seen_classes(&self) -> &BTreeSet<usize> {
        &self.seen_classes
    }

    pub fn unseen_classes(&self) -> &BTreeSet<usize> {
        &self.unseen_classes
    }

    /// Position of a class in the sorted seen-class list, the label space of
    /// the VSA heads.
    pub fn seen_index(&self, class: usize) -> Option<usize> {
        self.seen_sorted.binary_search(&class).ok()
    }

    pub fn num_seen_classes(&self) -> usize {
        self.seen_sorted.len()
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn test_seen_idx(&self) -> &[usize] {
        &self.test_seen_idx
    }

    pub fn test_unseen_idx(&self) -> &[usize] {
        &self.test_unseen_idx
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    pub fn attribute_row(&self, class: usize) -> Result<&[f64]> {
        if class >= self.attributes.rows() {
            return Err(CoreError::MissingAttribute { class });
        }
        Ok(self.attributes.row(class))
    }

    /// Gathers visual feature rows, recording each read in the audit.
    pub fn gather_visual(&self, indices: &[usize]) -> Result<Matrix> {
        for &i in indices {
            if i >= self.visual.rows() {
                return Err(CoreError::InvalidSplit {
                    detail: format!("instance index {i} out of range"),
                });
            }
            self.audit.record(i);
        }
        self.visual.gather_rows(indices)
    }

    /// Gathers the attribute rows paired with each instance's label.
    pub fn gather_paired_attributes(&self, indices: &[usize]) -> Result<Matrix> {
        let classes: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        self.attributes.gather_rows(&classes)
    }

    pub fn audit(&self) -> &AccessAudit {
        &self.audit
    }

    /// Unaudited view of the whole feature matrix, for writing dataset
    /// files. Training and evaluation paths must read rows through
    /// [`Dataset::gather_visual`] so the audit stays meaningful.
    pub fn visual_for_export(&self) -> &Matrix {
        &self.visual
    }

    /// The split lists in file form.
    pub fn split_file(&self) -> SplitFile {
        SplitFile {
            seen_classes: self.seen_classes.iter().copied().collect(),
            unseen_classes: self.unseen_classes.iter().copied().collect(),
            train_idx: self.train_idx.clone(),
            test_seen_idx: self.test_seen_idx.clone(),
            test_unseen_idx: self.test_unseen_idx.clone(),
        }
    }

    /// Total audited reads of visual rows whose label is an unseen class.
    pub fn unseen_visual_reads(&self) -> u64 {
        (0..self.num_instances())
            .filter(|&i| self.unseen_classes.contains(&self.labels[i]))
            .map(|i| self.audit.reads(i))
            .sum()
    }
}

/// Loads and validates the four dataset files.
pub fn load_dataset(
    feature_path: impl AsRef<Path>,
    attribute_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    split_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let visual = formats::load_matrix(feature_path)?;
    let attributes = formats::load_matrix(attribute_path)?;
    let labels = formats::load_labels(label_path, visual.rows())?;
    let split = formats::load_split(split_path)?;
    Dataset::new(
        visual,
        attributes,
        labels,
        split.seen_classes,
        split.unseen_classes,
        split.train_idx,
        split.test_seen_idx,
        split.test_unseen_idx,
    )
}

/// One named invariant check.
#[derive(Debug, Clone)]
pub struct SplitCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SplitCheck {
    fn pass(name: &'static str) -> Self {
        SplitCheck {
            name,
            passed: true,
            detail: String::new(),
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        SplitCheck {
            name,
            passed: false,
            detail,
        }
    }

    fn to_error(&self) -> CoreError {
        match self.name {
            "labels_have_attributes" => {
                let class = self
                    .detail
                    .split_whitespace()
                    .find_map(|w| w.parse().ok())
                    .unwrap_or(usize::MAX);
                CoreError::MissingAttribute { class }
            }
            "classes_disjoint" | "index_lists_disjoint" => CoreError::SplitOverlap {
                detail: self.detail.clone(),
            },
            _ => CoreError::InvalidSplit {
                detail: format!("{}: {}", self.name, self.detail),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub checks: Vec<SplitCheck>,
}

impl SplitReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&SplitCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Runs every dataset invariant and reports each check by name. Never
/// errors; callers decide what a failure means.
pub fn validate_split(ds: &Dataset) -> SplitReport {
    let mut checks = Vec::new();
    let n = ds.num_instances();
    let c = ds.num_classes();

    // Every label references a class with an attribute row.
    match ds.labels.iter().find(|&&l| l >= c) {
        None => checks.push(SplitCheck::pass("labels_have_attributes")),
        Some(&l) => checks.push(SplitCheck::fail(
            "labels_have_attributes",
            format!("label {l} has no attribute row (only {c} classes)"),
        )),
    }

    // Seen and unseen class sets are disjoint.
    let overlap: Vec<usize> = ds.seen_classes.intersection(&ds.unseen_classes).copied().collect();
    if overlap.is_empty() {
        checks.push(SplitCheck::pass("classes_disjoint"));
    } else {
        checks.push(SplitCheck::fail(
            "classes_disjoint",
            format!("classes in both seen and unseen: {overlap:?}"),
        ));
    }

    // All index lists stay in range.
    let out_of_range = |idx: &[usize]| idx.iter().find(|&&i| i >= n).copied();
    let mut bad = None;
    for (list, name) in [
        (&ds.train_idx, "train_idx"),
        (&ds.test_seen_idx, "test_seen_idx"),
        (&ds.test_unseen_idx, "test_unseen_idx"),
    ] {
        if let Some(i) = out_of_range(list) {
            bad = Some(format!("{name} contains {i}, dataset has {n} instances"));
            break;
        }
    }
    match bad {
        None => checks.push(SplitCheck::pass("indices_in_range")),
        Some(detail) => {
            checks.push(SplitCheck::fail("indices_in_range", detail));
            // Remaining checks index into labels; stop here.
            return SplitReport { checks };
        }
    }

    // Train labels come from seen classes only.
    match ds
        .train_idx
        .iter()
        .find(|&&i| !ds.seen_classes.contains(&ds.labels[i]))
    {
        None => checks.push(SplitCheck::pass("train_labels_seen")),
        Some(&i) => checks.push(SplitCheck::fail(
            "train_labels_seen",
            format!("train index {i} has unseen label {}", ds.labels[i]),
        )),
    }

    // Seen-test labels come from seen classes.
    match ds
        .test_seen_idx
        .iter()
        .find(|&&i| !ds.seen_classes.contains(&ds.labels[i]))
    {
        None => checks.push(SplitCheck::pass("test_seen_labels_seen")),
        Some(&i) => checks.push(SplitCheck::fail(
            "test_seen_labels_seen",
            format!("test_seen index {i} has non-seen label {}", ds.labels[i]),
        )),
    }

    // Unseen-test labels come from unseen classes.
    match ds
        .test_unseen_idx
        .iter()
        .find(|&&i| !ds.unseen_classes.contains(&ds.labels[i]))
    {
        None => checks.push(SplitCheck::pass("test_unseen_labels_unseen")),
        Some(&i) => checks.push(SplitCheck::fail(
            "test_unseen_labels_unseen",
            format!("test_unseen index {i} has non-unseen label {}", ds.labels[i]),
        )),
    }

    // Index lists are pairwise disjoint.
    let mut seen_once: BTreeSet<usize> = BTreeSet::new();
    let mut dup = None;
    for list in [&ds.train_idx, &ds.test_seen_idx, &ds.test_unseen_idx] {
        for &i in list.iter() {
            if !seen_once.insert(i) {
                dup = Some(i);
                break;
            }
        }
    }
    match dup {
        None => checks.push(SplitCheck::pass("index_lists_disjoint")),
        Some(i) => checks.push(SplitCheck::fail(
            "index_lists_disjoint",
            format!("instance {i} appears in more than one index list"),
        )),
    }

    SplitReport { checks }
}

/// One training batch: visual rows paired with their class attribute rows.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub x: Matrix,
    pub a: Matrix,
    /// Global class ids.
    pub labels: Vec<usize>,
    /// Labels remapped into the seen-class index space.
    pub seen_label_idx: Vec<usize>,
    pub instance_idx: Vec<usize>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Shuffles the train indices with `epoch_seed` and partitions them into
/// paired batches; a final short batch is kept.
pub fn make_paired_batches(
    ds: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<PairedBatch>> {
    if ds.train_idx.is_empty() {
        return Err(CoreError::Empty {
            what: "train split".into(),
        });
    }
    if batch_size == 0 {
        return Err(CoreError::InvalidSpec {
            detail: "batch size must be positive".into(),
        });
    }
    let mut order = ds.train_idx.to_vec();
    let mut rng = StdRng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);

    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let x = ds.gather_visual(chunk)?;
        let a = ds.gather_paired_attributes(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let seen_label_idx = labels
            .iter()
            .map(|&l| {
                ds.seen_index(l).ok_or_else(|| CoreError::InvalidSplit {
                    detail: format!("train label {l} is not a seen class"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        batches.push(PairedBatch {
            x,
            a,
            labels,
            seen_label_idx,
            instance_idx: chunk.to_vec(),
        });
    }
    Ok(batches)
}
