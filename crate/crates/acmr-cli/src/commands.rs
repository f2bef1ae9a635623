//! Subcommand implementations. Each command resolves its inputs, runs the
//! core pipeline, and writes machine-readable outputs plus a config echo
//! into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use acmr_core::data::{formats, generate_synthetic, load_dataset, Dataset, PairedBatch};
use acmr_core::eval::{evaluate_gzsl, export_embeddings, GzslMetrics};
use acmr_core::ndcore::gradcheck::gradient_check;
use acmr_core::ndcore::rng::{seeded_rng, standard_normal};
use acmr_core::trainer::{
    build_classifier_trainset, composite_backward, composite_forward, load_checkpoint,
    save_checkpoint, total_loss, train_acmr_with, train_final_classifier, AcmrModel,
    BackwardWeights, Checkpoint, LossWeights, StepNoise, TrainConfig, TrainHistory,
};
use acmr_core::vae::ReconLoss;
use acmr_core::CoreError;

use crate::config::{DatasetSource, RunConfig};
use crate::logging;
use crate::CliError;

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    cfg.write_echo(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

/// Builds the dataset the config points at.
pub fn resolve_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ds = match &cfg.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec)?,
        DatasetSource::Files(files) => load_dataset(
            &files.features,
            &files.attributes,
            &files.labels,
            &files.split,
        )?,
    };
    Ok(ds)
}

/// `synth`: writes the four dataset files and the config echo.
pub fn run_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let spec = match &cfg.dataset {
        DatasetSource::Synthetic(spec) => spec,
        DatasetSource::Files(_) => {
            return Err(CliError::Config(
                "synth needs a synthetic dataset spec in the config".into(),
            ))
        }
    };
    spec.validate()?;
    let ds = generate_synthetic(spec)?;
    let out = ensure_out_dir(cfg)?;

    let features = out.join("features.acmx");
    let attributes = out.join("attributes.acmx");
    let labels = out.join("labels.csv");
    let split = out.join("split.json");
    formats::write_matrix_acmx(&features, ds.visual_for_export())?;
    formats::write_matrix_acmx(&attributes, ds.attributes())?;
    formats::write_labels(&labels, ds.labels())?;
    formats::write_split(&split, &ds.split_file())?;
    logging::info(format!(
        "synth: wrote {} instances / {} classes under {}",
        ds.num_instances(),
        ds.num_classes(),
        out.display()
    ));
    Ok(vec![features, attributes, labels, split])
}

pub struct TrainOutputs {
    pub metrics: GzslMetrics,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub metrics_path: PathBuf,
}

/// `train`: the full two-phase pipeline plus evaluation and artifacts.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutputs, CliError> {
    let started = Instant::now();
    let ds = resolve_dataset(cfg)?;
    let out = ensure_out_dir(cfg)?;
    let tc = &cfg.train;
    tc.validate()?;

    logging::info(format!(
        "train: {} instances, {} seen / {} unseen classes, seed {}",
        ds.num_instances(),
        ds.seen_classes().len(),
        ds.unseen_classes().len(),
        tc.seed
    ));

    let every = tc.checkpoint_every;
    let out_for_epochs = out.clone();
    let tc_for_epochs = tc.clone();
    let (model, history) = train_acmr_with(&ds, tc, move |record, model| {
        logging::info(format!(
            "epoch {:>3}: total {:.4} rec {:.4} ma {:.4} rep {:.4} iem {:.4} active {}",
            record.epoch, record.total, record.rec, record.ma, record.rep, record.iem,
            record.active_units
        ));
        if let Some(k) = every {
            if k > 0 && (record.epoch + 1) % k == 0 {
                let path = out_for_epochs.join(format!("checkpoint_epoch_{}.acmr", record.epoch));
                save_checkpoint(
                    &path,
                    &Checkpoint {
                        model: model.clone(),
                        classifier: None,
                        config: tc_for_epochs.clone(),
                    },
                )?;
            }
        }
        Ok(())
    })?;

    logging::info("train: fitting final softmax classifier");
    let latents = build_classifier_trainset(&model, &ds, tc)?;
    let classifier = train_final_classifier(&latents, ds.num_classes(), tc)?;

    let metrics = evaluate_gzsl(&model, &classifier, &ds)?;

    let checkpoint = out.join("checkpoint.acmr");
    save_checkpoint(
        &checkpoint,
        &Checkpoint {
            model,
            classifier: Some(classifier),
            config: tc.clone(),
        },
    )?;
    let history_path = out.join("history.ndjson");
    write_text(&history_path, &history.to_ndjson())?;
    let metrics_path = out.join("metrics.json");
    write_text(&metrics_path, &(metrics_json(&metrics)? + "\n"))?;

    logging::info(format!(
        "train: done in {:.1}s, H = {:.4}",
        started.elapsed().as_secs_f64(),
        metrics.h
    ));
    Ok(TrainOutputs {
        metrics,
        checkpoint,
        history: history_path,
        metrics_path,
    })
}

/// `eval`: evaluation only, from a checkpoint.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<GzslMetrics, CliError> {
    let ds = resolve_dataset(cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let classifier = ckpt.classifier.ok_or(CliError::Core(CoreError::HeaderMismatch {
        detail: "checkpoint has no final classifier; run train to completion first".into(),
    }))?;
    let metrics = evaluate_gzsl(&ckpt.model, &classifier, &ds)?;
    let out = ensure_out_dir(cfg)?;
    write_text(&out.join("metrics.json"), &(metrics_json(&metrics)? + "\n"))?;
    Ok(metrics)
}

/// `export-embeddings`: posterior means of test images and class
/// attributes, as CSV.
pub fn run_export(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf, CliError> {
    let ds = resolve_dataset(cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let out = ensure_out_dir(cfg)?;
    let path = out.join("embeddings.csv");
    export_embeddings(&ckpt.model, &ds, &path)?;
    logging::info(format!("export: wrote {}", path.display()));
    Ok(path)
}

pub fn metrics_json(metrics: &GzslMetrics) -> Result<String, CliError> {
    serde_json::to_string_pretty(metrics).map_err(|e| CliError::Config(format!("metrics: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Core(CoreError::Io(e)))
}

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Environment hook for tests: names a component whose analytic gradient is
/// deliberately corrupted so the checker must flag it.
pub const CORRUPT_BACKWARD_ENV: &str = "ACMR_TEST_CORRUPT_BACKWARD";

pub struct GradcheckComponent {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

pub struct GradcheckReportOut {
    pub components: Vec<GradcheckComponent>,
    pub passed: bool,
}

/// `gradcheck`: checks every loss component and the composite against
/// central finite differences on an internal tiny model and 4-sample batch.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<GradcheckReportOut, CliError> {
    let seed = cfg.train.seed;
    let tc = TrainConfig {
        latent_dim: 4,
        enc_hidden_visual: 10,
        dec_hidden_visual: 9,
        enc_hidden_semantic: 8,
        dec_hidden_semantic: 7,
        iem_hidden: 6,
        seed,
        ..TrainConfig::default()
    };
    let (d_visual, d_attr, classes, rows) = (6, 5, 3, 4);
    let mut rng = seeded_rng(seed, "gradcheck_batch", &[]);
    let batch = PairedBatch {
        x: standard_normal(rows, d_visual, &mut rng),
        a: standard_normal(rows, d_attr, &mut rng),
        labels: (0..rows).map(|i| i % classes).collect(),
        seen_label_idx: (0..rows).map(|i| i % classes).collect(),
        instance_idx: (0..rows).collect(),
    };
    let noise = StepNoise::draw(seed, 0, 0, rows, tc.latent_dim);
    let corrupt = std::env::var(CORRUPT_BACKWARD_ENV).ok();

    // Component table: name, forward weights, pick, backward weights.
    type Pick = fn(&acmr_core::trainer::LossBreakdown) -> f64;
    let full = LossWeights {
        alpha: cfg.train.alpha,
        beta: cfg.train.beta_schedule.max_value,
        lambda: cfg.train.lambda_schedule.max_value,
        iem_weight: cfg.train.iem_weight,
    };
    let unit = |alpha, beta, lambda, iem_weight| LossWeights {
        alpha,
        beta,
        lambda,
        iem_weight,
    };
    let cases: Vec<(&'static str, LossWeights, Pick, BackwardWeights)> = vec![
        (
            "L_Rec",
            unit(full.alpha, 0.0, 0.0, 0.0),
            |b| b.rec,
            BackwardWeights {
                recon: 1.0,
                alpha: full.alpha,
                beta: 0.0,
                lambda: 0.0,
                iem: 0.0,
            },
        ),
        (
            "L_MA",
            unit(0.0, 1.0, 0.0, 0.0),
            |b| b.ma,
            BackwardWeights {
                recon: 0.0,
                alpha: 0.0,
                beta: 1.0,
                lambda: 0.0,
                iem: 0.0,
            },
        ),
        (
            "L_Rep",
            unit(0.0, 0.0, 1.0, 0.0),
            |b| b.rep,
            BackwardWeights {
                recon: 0.0,
                alpha: 0.0,
                beta: 0.0,
                lambda: 1.0,
                iem: 0.0,
            },
        ),
        (
            "L_IEM",
            unit(0.0, 0.0, 0.0, 1.0),
            |b| b.iem,
            BackwardWeights {
                recon: 0.0,
                alpha: 0.0,
                beta: 0.0,
                lambda: 0.0,
                iem: 1.0,
            },
        ),
        (
            "composite",
            full,
            |b| b.total,
            BackwardWeights::training(&full),
        ),
    ];

    let mut components = Vec::new();
    for (name, weights, pick, bw) in cases {
        let mut model = AcmrModel::new(d_visual, d_attr, classes, &tc);
        let corrupt_this = corrupt.as_deref() == Some(name);
        let loss_fn = |m: &mut AcmrModel| -> acmr_core::Result<f64> {
            let b = total_loss(m, &batch, &weights, &noise, ReconLoss::L1, true)?;
            Ok(pick(&b))
        };
        let backward_fn = |m: &mut AcmrModel| -> acmr_core::Result<()> {
            let (_, tape) = composite_forward(m, &batch, &weights, &noise, ReconLoss::L1, true)?;
            m.zero_grads();
            composite_backward(m, &batch, &tape, &noise, &bw, ReconLoss::L1)?;
            if corrupt_this {
                m.visual.encoder.layers_mut()[0].grad_w_mut().data_mut()[0] += 1.0;
            }
            Ok(())
        };
        let report = gradient_check(&mut model, loss_fn, backward_fn, 1e-5, 12, seed)?;
        let worst = report
            .worst
            .as_ref()
            .map(|w| format!("{}[{}]", w.block, w.index))
            .unwrap_or_else(|| "-".into());
        components.push(GradcheckComponent {
            name,
            max_rel_error: report.max_rel_error,
            worst,
            passed: report.max_rel_error < GRADCHECK_THRESHOLD,
        });
    }

    let passed = components.iter().all(|c| c.passed);
    Ok(GradcheckReportOut { components, passed })
}

/// Renders the gradcheck report as stable, line-per-component text.
pub fn format_gradcheck(report: &GradcheckReportOut) -> String {
    let mut out = String::new();
    for c in &report.components {
        out.push_str(&format!(
            "{:<10} max_rel_error={:.3e} worst={} {}\n",
            c.name,
            c.max_rel_error,
            c.worst,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    out.push_str(&format!(
        "gradcheck: {} (threshold {GRADCHECK_THRESHOLD:e})\n",
        if report.passed { "PASS" } else { "FAIL" }
    ));
    out
}

/// Recomputes a training history's component identity; returns the worst
/// absolute deviation. Exposed for tests.
pub fn history_identity_error(history: &TrainHistory, iem_weight: f64) -> f64 {
    history
        .records
        .iter()
        .map(|r| {
            let sum = r.rec + r.beta * r.ma + r.lambda * r.rep + iem_weight * r.iem;
            (r.total - sum).abs()
        })
        .fold(0.0, f64::max)
}
