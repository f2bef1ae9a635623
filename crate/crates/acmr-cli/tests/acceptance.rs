//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line with its measured numbers. Published-table absolute numbers
//! on the real benchmark datasets are out of reach without the original
//! feature files, so acceptance is property-based: metric-formula
//! reproduction, gradient checks, closed-form oracles, and synthetic
//! end-to-end thresholds.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see every
//! line.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use acmr_cli::config::{DatasetSource, RunConfig};
use acmr_cli::{commands, run_gradcheck, run_train};
use acmr_core::alignment::wasserstein_gaussian;
use acmr_core::data::{generate_synthetic, load_dataset, validate_split, SyntheticSpec};
use acmr_core::eval::harmonic_mean;
use acmr_core::iem::iem_loss;
use acmr_core::ndcore::rng::{seeded_rng, standard_normal};
use acmr_core::ndcore::{Activation, DenseLayer, Matrix};
use acmr_core::trainer::{
    load_checkpoint, save_checkpoint, train_acmr, Checkpoint, Schedule, TrainConfig,
};
use acmr_core::vae::{kl_diag_gaussian, GaussianLatent};
use acmr_core::vsa::rep_loss;

fn random_latent(rows: usize, cols: usize, seed: u64) -> GaussianLatent {
    let mut rng = seeded_rng(seed, "acceptance_latent", &[]);
    GaussianLatent::new(
        standard_normal(rows, cols, &mut rng),
        standard_normal(rows, cols, &mut rng),
    )
    .unwrap()
}

/// Criterion 1: the harmonic-mean formula reproduces the published rows.
/// CUB and SUN match the printed values within ±0.05 percentage points.
/// The published AwA entries are inconsistent with their own inputs
/// (59.4/77.6 recomputes to 67.3, printed 67.5; 60.0/80.2 to 68.6,
/// printed 68.7), so the formula is asserted against its recomputation
/// within the ±0.2-point slack.
#[test]
fn a1_metric_formula_vs_published_rows() {
    let cases = [
        ("CUB", 0.531, 0.577, 0.553, 0.0005),
        ("SUN", 0.491, 0.395, 0.438, 0.0005),
        ("AwA1", 0.594, 0.776, 0.673, 0.002),
        ("AwA2", 0.600, 0.802, 0.686, 0.002),
    ];
    for (name, u, s, want, tol) in cases {
        let h = harmonic_mean(u, s);
        assert!(
            (h - want).abs() <= tol,
            "{name}: H({u}, {s}) = {h}, want {want} +- {tol}"
        );
    }
    println!("ACCEPTANCE 1 metric-formula-vs-published: PASS");
}

/// Criterion 2: the gradient suite reports max relative error below 1e-4
/// against central finite differences for every loss component and the
/// composite, on a 4-sample synthetic batch.
#[test]
fn a2_gradient_suite() {
    let report = run_gradcheck(&RunConfig::default()).unwrap();
    for c in &report.components {
        println!(
            "ACCEPTANCE 2   {:<10} max_rel_error = {:.3e}",
            c.name, c.max_rel_error
        );
        assert!(
            c.max_rel_error < 1e-4,
            "{} gradient error {}",
            c.name,
            c.max_rel_error
        );
    }
    assert!(report.passed);
    println!("ACCEPTANCE 2 gradient-suite: PASS");
}

/// Criterion 3: closed-form loss oracles.
#[test]
fn a3_closed_form_oracles() {
    // KL(mu = 1, logvar = 0) = 0.5.
    let lat = GaussianLatent::new(Matrix::filled(1, 1, 1.0).unwrap(), Matrix::zeros(1, 1)).unwrap();
    let kl = kl_diag_gaussian(&lat);
    assert!((kl - 0.5).abs() < 1e-10, "KL = {kl}");

    // Wasserstein with equal variances and mu-gap (3, 4) = 5.
    let d = 4;
    let mut mu = Matrix::zeros(1, d);
    mu.set(0, 0, 3.0);
    mu.set(0, 1, 4.0);
    let logvar = Matrix::filled(1, d, -0.25).unwrap();
    let lx = GaussianLatent::new(mu, logvar.clone()).unwrap();
    let la = GaussianLatent::new(Matrix::zeros(1, d), logvar).unwrap();
    let w = wasserstein_gaussian(&lx, &la).unwrap().value;
    assert!((w - 5.0).abs() < 1e-10, "W = {w}");

    // Discriminator loss at all-zero scores = 2 ln 2.
    let zeros = vec![0.0; 8];
    let loss = iem_loss(&zeros, &zeros);
    assert!((loss - 2.0 * 2.0_f64.ln()).abs() < 1e-10, "iem = {loss}");

    // Representation loss at uniform logits over 10 classes = ln 10 per
    // head.
    let heads = acmr_core::vsa::VsaHeads {
        head_x: DenseLayer::zeros(6, 10, Activation::Identity),
        head_a: DenseLayer::zeros(6, 10, Activation::Identity),
    };
    let z = Matrix::zeros(5, 6);
    let labels = vec![2usize; 5];
    let rep = rep_loss(&z, &z, &labels, &heads).unwrap();
    let ln10 = 10.0_f64.ln();
    assert!((rep.component_x - ln10).abs() < 1e-9, "rep_x = {}", rep.component_x);
    assert!((rep.component_a - ln10).abs() < 1e-9, "rep_a = {}", rep.component_a);

    println!("ACCEPTANCE 3 closed-form-oracles: PASS");
}

/// Criterion 4: alignment-loss metric properties over random latents.
#[test]
fn a4_alignment_loss_properties() {
    // Symmetry, exact.
    for seed in 0..1000u64 {
        let p = random_latent(1, 4, seed * 2);
        let q = random_latent(1, 4, seed * 2 + 1);
        let pq = wasserstein_gaussian(&p, &q).unwrap().value;
        let qp = wasserstein_gaussian(&q, &p).unwrap().value;
        assert_eq!(pq, qp, "symmetry violated at seed {seed}");

        // Non-negativity and zero-iff-equal.
        assert!(pq >= 0.0);
        let equal = p.mu == q.mu && p.logvar == q.logvar;
        assert_eq!(pq == 0.0, equal, "zero-iff-equal violated at seed {seed}");
        let self_dist = wasserstein_gaussian(&p, &p).unwrap().value;
        assert_eq!(self_dist, 0.0);
    }

    // Triangle inequality on random triples.
    for seed in 0..1000u64 {
        let p = random_latent(1, 3, 10_000 + seed * 3);
        let q = random_latent(1, 3, 10_001 + seed * 3);
        let r = random_latent(1, 3, 10_002 + seed * 3);
        let pr = wasserstein_gaussian(&p, &r).unwrap().value;
        let pq = wasserstein_gaussian(&p, &q).unwrap().value;
        let qr = wasserstein_gaussian(&q, &r).unwrap().value;
        assert!(pr <= pq + qr + 1e-12, "triangle violated at seed {seed}");
    }
    println!("ACCEPTANCE 4 alignment-properties: PASS");
}

/// Criterion 5: the default synthetic end-to-end run (8 seen / 4 unseen
/// classes, 50 samples per class, 64-dim visual, 16-dim attributes, 100
/// epochs) reaches H >= 0.90 and unseen accuracy >= 0.85 within the time
/// budget for at least 4 of 5 fixed seeds.
#[test]
fn a5_end_to_end_synthetic_thresholds() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut passes = 0;
    let dir = tempfile::tempdir().unwrap();
    for seed in seeds {
        let mut cfg = RunConfig {
            out_dir: dir.path().join(format!("seed{seed}")),
            ..RunConfig::default()
        };
        cfg.train.seed = seed;
        let started = Instant::now();
        let outputs = run_train(&cfg).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        let m = outputs.metrics;
        let ok = m.h >= 0.90 && m.aca_u >= 0.85 && elapsed < 300.0;
        println!(
            "ACCEPTANCE 5   seed {seed}: H = {:.4}, aca_u = {:.4}, {:.1}s {}",
            m.h,
            m.aca_u,
            elapsed,
            if ok { "ok" } else { "below threshold" }
        );
        if ok {
            passes += 1;
        }
    }
    assert!(passes >= 4, "only {passes}/5 seeds passed");
    println!("ACCEPTANCE 5 end-to-end-synthetic: PASS ({passes}/5 seeds)");
}

/// Criterion 6: with over-weighted KL (alpha = 10), the discriminator
/// measurably resists posterior collapse: median active units over 5 seeds
/// after 50 epochs is strictly greater with it enabled than disabled.
/// The comparison isolates the two-VAE backbone (alignment and
/// classification weights at zero, the published module ablation pair) and
/// compresses the 100-epoch full-data schedule into desk scale by scaling
/// the VAE and discriminator learning rates together; all other settings
/// are identical between the two arms.
#[test]
fn a6_iem_collapse_mitigation() {
    let spec = SyntheticSpec::default();
    let ds = generate_synthetic(&spec).unwrap();
    let actives = |iem_enabled: bool| -> Vec<usize> {
        [1u64, 2, 3, 4, 5]
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    seed,
                    epochs: 50,
                    alpha: 10.0,
                    lr_vae: 3e-3,
                    lr_iem: 6.6e-4,
                    iem_weight: 5.0,
                    iem_enabled,
                    beta_schedule: Schedule {
                        start_epoch: 0,
                        end_epoch: 20,
                        max_value: 0.0,
                    },
                    lambda_schedule: Schedule {
                        start_epoch: 20,
                        end_epoch: 75,
                        max_value: 0.0,
                    },
                    ..TrainConfig::default()
                };
                let (_, history) = train_acmr(&ds, &cfg).unwrap();
                history.records.last().unwrap().active_units
            })
            .collect()
    };
    let with_iem = actives(true);
    let without_iem = actives(false);
    let median = |mut v: Vec<usize>| -> usize {
        v.sort_unstable();
        v[v.len() / 2]
    };
    let m_on = median(with_iem.clone());
    let m_off = median(without_iem.clone());
    println!(
        "ACCEPTANCE 6   active units with IEM {with_iem:?} (median {m_on}), without {without_iem:?} (median {m_off})"
    );
    assert!(
        m_on > m_off,
        "median active units with IEM ({m_on}) not greater than without ({m_off})"
    );
    println!("ACCEPTANCE 6 iem-collapse-mitigation: PASS");
}

/// Criterion 7: two runs of the train command with identical config and
/// seed produce bit-identical checkpoints, histories, metrics, and
/// embedding exports.
#[test]
fn a7_train_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_json = |out: &Path| {
        format!(
            r#"{{
  "out_dir": "{}",
  "dataset": {{"synthetic": {{"num_seen": 4, "num_unseen": 2, "d_visual": 16, "d_attr": 8,
                              "samples_per_class": 25, "prototype_noise": 0.1, "seed": 13}}}},
  "train": {{"seed": 42, "epochs": 15, "lr_vae": 3e-3,
             "enc_hidden_visual": 256, "dec_hidden_visual": 256,
             "enc_hidden_semantic": 128, "dec_hidden_semantic": 128,
             "unseen_samples_per_class": 100}}
}}"#,
            out.display()
        )
    };
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        let cfg_path = dir.path().join(format!("{tag}.json"));
        std::fs::write(&cfg_path, config_json(&out)).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_acmr"))
            .env("ACMR_LOG", "off")
            .args(["train", "--config"])
            .arg(&cfg_path)
            .status()
            .unwrap();
        assert!(status.success());
        let status = Command::new(env!("CARGO_BIN_EXE_acmr"))
            .env("ACMR_LOG", "off")
            .args(["export-embeddings", "--config"])
            .arg(&cfg_path)
            .arg("--checkpoint")
            .arg(out.join("checkpoint.acmr"))
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let a = run("a");
    let b = run("b");
    for name in [
        "checkpoint.acmr",
        "history.ndjson",
        "metrics.json",
        "embeddings.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    println!("ACCEPTANCE 7 determinism: PASS");
}

/// Criterion 8: the access audit proves training reads no unseen-class
/// visual feature. A positive control confirms the audit counts reads.
#[test]
fn a8_unseen_leak_guard() {
    let spec = SyntheticSpec {
        samples_per_class: 20,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();

    // Positive control: the audit sees unseen reads when they happen.
    ds.audit().reset();
    let unseen_row = ds.test_unseen_idx()[0];
    let _ = ds.gather_visual(&[unseen_row]).unwrap();
    assert!(ds.unseen_visual_reads() > 0, "audit failed to count a read");

    let cfg = TrainConfig {
        epochs: 5,
        latent_dim: 16,
        enc_hidden_visual: 64,
        dec_hidden_visual: 64,
        enc_hidden_semantic: 64,
        dec_hidden_semantic: 64,
        iem_hidden: 32,
        ..TrainConfig::default()
    };
    ds.audit().reset();
    let _ = train_acmr(&ds, &cfg).unwrap();
    assert_eq!(
        ds.unseen_visual_reads(),
        0,
        "training read unseen-class visual features"
    );
    println!("ACCEPTANCE 8 unseen-leak-guard: PASS");
}

/// Criterion 9: format round-trips. Checkpoint save -> load -> save is
/// byte-identical; synthetic dataset files load and validate.
#[test]
fn a9_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();

    // Checkpoint bytes.
    let cfg = TrainConfig {
        latent_dim: 8,
        enc_hidden_visual: 16,
        dec_hidden_visual: 16,
        enc_hidden_semantic: 12,
        dec_hidden_semantic: 12,
        iem_hidden: 9,
        ..TrainConfig::default()
    };
    let model = acmr_core::trainer::AcmrModel::new(10, 6, 4, &cfg);
    let ckpt = Checkpoint {
        model,
        classifier: None,
        config: cfg,
    };
    let p1 = dir.path().join("m1.acmr");
    let p2 = dir.path().join("m2.acmr");
    save_checkpoint(&p1, &ckpt).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(
        std::fs::read(&p1).unwrap(),
        std::fs::read(&p2).unwrap(),
        "checkpoint round trip is not byte-identical"
    );

    // Synthetic dataset files.
    let out = dir.path().join("synth");
    let run_cfg = RunConfig {
        out_dir: out.clone(),
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            samples_per_class: 10,
            ..SyntheticSpec::default()
        }),
        ..RunConfig::default()
    };
    commands::run_synth(&run_cfg).unwrap();
    let ds = load_dataset(
        out.join("features.acmx"),
        out.join("attributes.acmx"),
        out.join("labels.csv"),
        out.join("split.json"),
    )
    .unwrap();
    let report = validate_split(&ds);
    assert!(report.all_passed(), "{:?}", report.first_failure());

    println!("ACCEPTANCE 9 format-round-trips: PASS");
}
