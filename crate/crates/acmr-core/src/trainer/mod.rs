//! Composite-loss training: annealing schedules, the two-phase protocol
//! (the aligned cross-modal model first, then the final softmax
//! classifier), checkpointing, and seeded determinism.

pub mod checkpoint;
pub mod loss;

use serde::{Deserialize, Serialize};

use crate::data::{make_paired_batches, Dataset};
use crate::error::{CoreError, Result};
use crate::iem::{collapse_diagnostics, IemNet};
use crate::ndcore::gradcheck::{visit_layer_blocks, ParamBlock, ParamBlocks};
use crate::ndcore::rng::{mix_seed, seeded_rng, standard_normal};
use crate::ndcore::{Activation, AdamParams, DenseLayer, LayerAdam, Matrix, Mlp};
use crate::vae::{Modality, ReconLoss, VaeBranch};
use crate::vsa::{softmax_cross_entropy, VsaHeads};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    composite_backward, composite_forward, total_loss, BackwardWeights, LossBreakdown, StepNoise,
};

/// Per-step weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub iem_weight: f64,
}

/// Piecewise-linear warm-up: 0 until `start_epoch`, `max_value` from
/// `end_epoch` on, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub max_value: f64,
}

pub fn anneal(epoch: usize, s: &Schedule) -> f64 {
    if epoch >= s.end_epoch {
        s.max_value
    } else if epoch <= s.start_epoch {
        0.0
    } else {
        s.max_value * (epoch - s.start_epoch) as f64 / (s.end_epoch - s.start_epoch) as f64
    }
}

/// All training hyper-parameters. Every default is a plain value here, not
/// a hard-coded constant elsewhere, so sweeps are a matter of configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size_acmr: usize,
    pub batch_size_classifier: usize,
    pub lr_vae: f64,
    pub lr_iem: f64,
    pub lr_vsa: f64,
    pub lr_classifier: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub alpha: f64,
    pub iem_weight: f64,
    pub iem_enabled: bool,
    pub beta_schedule: Schedule,
    pub lambda_schedule: Schedule,
    pub unseen_samples_per_class: usize,
    pub enc_hidden_visual: usize,
    pub dec_hidden_visual: usize,
    pub enc_hidden_semantic: usize,
    pub dec_hidden_semantic: usize,
    pub iem_hidden: usize,
    pub reconstruction: ReconLoss,
    pub hidden_activation: Activation,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size_acmr: 50,
            batch_size_classifier: 32,
            lr_vae: 1.5e-4,
            lr_iem: 3.3e-5,
            lr_vsa: 7.4e-3,
            lr_classifier: 0.5e-3,
            latent_dim: 64,
            seed: 7,
            alpha: 2.0,
            iem_weight: 1.0,
            iem_enabled: true,
            beta_schedule: Schedule {
                start_epoch: 0,
                end_epoch: 20,
                max_value: 5.0,
            },
            lambda_schedule: Schedule {
                start_epoch: 20,
                end_epoch: 75,
                max_value: 295.0,
            },
            unseen_samples_per_class: 200,
            enc_hidden_visual: 1560,
            dec_hidden_visual: 1680,
            enc_hidden_semantic: 1450,
            dec_hidden_semantic: 665,
            iem_hidden: 99,
            reconstruction: ReconLoss::L1,
            hidden_activation: Activation::Relu,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_rates = [
            (self.lr_vae, "lr_vae"),
            (self.lr_iem, "lr_iem"),
            (self.lr_vsa, "lr_vsa"),
            (self.lr_classifier, "lr_classifier"),
        ];
        for (v, name) in positive_rates {
            if v <= 0.0 || !v.is_finite() {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name} must be positive, got {v}"),
                });
            }
        }
        let positive_counts = [
            (self.epochs, "epochs"),
            (self.batch_size_acmr, "batch_size_acmr"),
            (self.batch_size_classifier, "batch_size_classifier"),
            (self.latent_dim, "latent_dim"),
            (self.unseen_samples_per_class, "unseen_samples_per_class"),
            (self.enc_hidden_visual, "enc_hidden_visual"),
            (self.dec_hidden_visual, "dec_hidden_visual"),
            (self.enc_hidden_semantic, "enc_hidden_semantic"),
            (self.dec_hidden_semantic, "dec_hidden_semantic"),
            (self.iem_hidden, "iem_hidden"),
        ];
        for (v, name) in positive_counts {
            if v == 0 {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name} must be at least 1"),
                });
            }
        }
        for (w, name) in [(self.alpha, "alpha"), (self.iem_weight, "iem_weight")] {
            if w < 0.0 || !w.is_finite() {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name} must be non-negative, got {w}"),
                });
            }
        }
        for (s, name) in [
            (&self.beta_schedule, "beta_schedule"),
            (&self.lambda_schedule, "lambda_schedule"),
        ] {
            if s.start_epoch > s.end_epoch {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name}: start_epoch {} > end_epoch {}", s.start_epoch, s.end_epoch),
                });
            }
            if s.max_value < 0.0 || !s.max_value.is_finite() {
                return Err(CoreError::InvalidSpec {
                    detail: format!("{name}: max_value must be non-negative"),
                });
            }
        }
        Ok(())
    }

    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: anneal(epoch, &self.beta_schedule),
            lambda: anneal(epoch, &self.lambda_schedule),
            iem_weight: if self.iem_enabled { self.iem_weight } else { 0.0 },
        }
    }
}

/// Which learning-rate group a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Vae,
    Iem,
    Vsa,
}

/// All trainable weights of the aligned cross-modal model.
#[derive(Debug, Clone)]
pub struct AcmrModel {
    pub visual: VaeBranch,
    pub semantic: VaeBranch,
    pub iem_visual: IemNet,
    pub iem_semantic: IemNet,
    pub heads: VsaHeads,
}

impl AcmrModel {
    /// Builds a freshly initialized model. Each component draws from its own
    /// derived RNG, so adding components cannot shift others' initial
    /// weights.
    pub fn new(d_visual: usize, d_attr: usize, num_seen_classes: usize, cfg: &TrainConfig) -> Self {
        let act = cfg.hidden_activation;
        let mut rng_vx = seeded_rng(cfg.seed, "init_visual", &[]);
        let visual = VaeBranch::new(
            d_visual,
            cfg.enc_hidden_visual,
            cfg.dec_hidden_visual,
            cfg.latent_dim,
            Modality::Visual,
            act,
            &mut rng_vx,
        );
        let mut rng_se = seeded_rng(cfg.seed, "init_semantic", &[]);
        let semantic = VaeBranch::new(
            d_attr,
            cfg.enc_hidden_semantic,
            cfg.dec_hidden_semantic,
            cfg.latent_dim,
            Modality::Semantic,
            act,
            &mut rng_se,
        );
        let mut rng_ix = seeded_rng(cfg.seed, "init_iem_visual", &[]);
        let iem_visual = IemNet::new(d_visual, cfg.latent_dim, cfg.iem_hidden, act, &mut rng_ix);
        let mut rng_ia = seeded_rng(cfg.seed, "init_iem_semantic", &[]);
        let iem_semantic = IemNet::new(d_attr, cfg.latent_dim, cfg.iem_hidden, act, &mut rng_ia);
        let mut rng_heads = seeded_rng(cfg.seed, "init_vsa", &[]);
        let heads = VsaHeads::new(cfg.latent_dim, num_seen_classes, &mut rng_heads);
        AcmrModel {
            visual,
            semantic,
            iem_visual,
            iem_semantic,
            heads,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.visual.latent_dim()
    }

    pub fn zero_grads(&mut self) {
        self.visual.zero_grads();
        self.semantic.zero_grads();
        self.iem_visual.zero_grads();
        self.iem_semantic.zero_grads();
        self.heads.zero_grads();
    }

    /// Walks every dense layer in a fixed canonical order.
    pub fn visit_layers(&mut self, f: &mut dyn FnMut(String, ParamGroup, &mut DenseLayer)) {
        let mlp_layers = |mlp: &mut Mlp, prefix: &str, group: ParamGroup, f: &mut dyn FnMut(String, ParamGroup, &mut DenseLayer)| {
            for (i, layer) in mlp.layers_mut().iter_mut().enumerate() {
                f(format!("{prefix}.l{i}"), group, layer);
            }
        };
        mlp_layers(&mut self.visual.encoder, "visual.encoder", ParamGroup::Vae, f);
        mlp_layers(&mut self.visual.decoder, "visual.decoder", ParamGroup::Vae, f);
        mlp_layers(&mut self.semantic.encoder, "semantic.encoder", ParamGroup::Vae, f);
        mlp_layers(&mut self.semantic.decoder, "semantic.decoder", ParamGroup::Vae, f);
        mlp_layers(self.iem_visual.mlp_mut(), "iem_visual.score", ParamGroup::Iem, f);
        mlp_layers(self.iem_semantic.mlp_mut(), "iem_semantic.score", ParamGroup::Iem, f);
        f("vsa.head_x".to_string(), ParamGroup::Vsa, &mut self.heads.head_x);
        f("vsa.head_a".to_string(), ParamGroup::Vsa, &mut self.heads.head_a);
    }
}

impl ParamBlocks for AcmrModel {
    fn visit_param_blocks(&mut self, f: &mut dyn FnMut(ParamBlock<'_>)) {
        self.visit_layers(&mut |name, _, layer| visit_layer_blocks(layer, &name, f));
    }
}

/// Per-layer Adam states, grouped by the configured learning rates.
#[derive(Debug, Clone)]
pub struct AcmrOptimizer {
    states: Vec<(String, LayerAdam)>,
}

impl AcmrOptimizer {
    pub fn new(model: &mut AcmrModel, cfg: &TrainConfig) -> Self {
        let mut states = Vec::new();
        model.visit_layers(&mut |name, group, layer| {
            let lr = match group {
                ParamGroup::Vae => cfg.lr_vae,
                ParamGroup::Iem => cfg.lr_iem,
                ParamGroup::Vsa => cfg.lr_vsa,
            };
            states.push((name, LayerAdam::for_layer(layer, AdamParams::with_lr(lr))));
        });
        AcmrOptimizer { states }
    }

    pub fn step(&mut self, model: &mut AcmrModel) -> Result<()> {
        let mut idx = 0;
        let mut result = Ok(());
        model.visit_layers(&mut |name, _, layer| {
            if result.is_err() {
                return;
            }
            let (state_name, state) = &mut self.states[idx];
            debug_assert_eq!(state_name, &name);
            if let Err(e) = state.step(&name, layer) {
                result = Err(e);
            }
            idx += 1;
        });
        result
    }
}

/// One completed epoch. `total` satisfies
/// `rec + beta * ma + lambda * rep + iem_weight * iem` to within 1e-9.
/// The collapse diagnostics summarize the per-dimension KL of held-out
/// visual latents: how many dimensions stay active, and the mean and max
/// of the per-dimension values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub rec: f64,
    pub ma: f64,
    pub rep: f64,
    pub iem: f64,
    pub beta: f64,
    pub lambda: f64,
    pub active_units: usize,
    pub kl_per_dim_mean: f64,
    pub kl_per_dim_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON record per epoch, newline-delimited.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| CoreError::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?);
        }
        Ok(TrainHistory { records })
    }
}

/// How many held-out rows feed the per-epoch collapse diagnostics.
const DIAGNOSTIC_PROBE_ROWS: usize = 256;

/// Threshold on per-dimension KL for a latent unit to count as active.
pub const ACTIVE_UNIT_THRESHOLD: f64 = 0.01;

/// Trains the aligned cross-modal model on the seen-class training split.
pub fn train_acmr(ds: &Dataset, cfg: &TrainConfig) -> Result<(AcmrModel, TrainHistory)> {
    train_acmr_with(ds, cfg, |_, _| Ok(()))
}

/// Like [`train_acmr`] but invokes `on_epoch` with the record and a
/// read-only model snapshot after each epoch completes.
pub fn train_acmr_with(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &AcmrModel) -> Result<()>,
) -> Result<(AcmrModel, TrainHistory)> {
    cfg.validate()?;
    let mut model = AcmrModel::new(ds.d_visual(), ds.d_attr(), ds.num_seen_classes(), cfg);
    let mut opt = AcmrOptimizer::new(&mut model, cfg);
    let mut history = TrainHistory::default();

    // Diagnostics probe: held-out seen-class rows (never trained on).
    let probe_idx: Vec<usize> = ds
        .test_seen_idx()
        .iter()
        .copied()
        .take(DIAGNOSTIC_PROBE_ROWS)
        .collect();

    for epoch in 0..cfg.epochs {
        let weights = cfg.weights_at(epoch);
        let epoch_seed = mix_seed(cfg.seed, "epoch_shuffle", &[epoch as u64]);
        let batches = make_paired_batches(ds, cfg.batch_size_acmr, epoch_seed)?;

        let mut sums = LossSums::default();
        for (bi, batch) in batches.iter().enumerate() {
            let noise = StepNoise::draw(cfg.seed, epoch, bi, batch.len(), cfg.latent_dim);
            let (breakdown, tape) =
                composite_forward(&model, batch, &weights, &noise, cfg.reconstruction, cfg.iem_enabled)?;
            if !breakdown.total.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: bi,
                    detail: format!("total loss = {}", breakdown.total),
                });
            }
            model.zero_grads();
            composite_backward(
                &mut model,
                batch,
                &tape,
                &noise,
                &BackwardWeights::training(&weights),
                cfg.reconstruction,
            )?;
            opt.step(&mut model)?;
            sums.add(&breakdown, batch.len());
        }

        let (active_units, kl_mean, kl_max) = if probe_idx.is_empty() {
            (0, 0.0, 0.0)
        } else {
            let probe = ds.gather_visual(&probe_idx)?;
            let lat = model.visual.encode(&probe)?;
            let diag = collapse_diagnostics(&lat, ACTIVE_UNIT_THRESHOLD);
            let mean = diag.kl_per_dim.iter().sum::<f64>() / diag.kl_per_dim.len().max(1) as f64;
            let max = diag.kl_per_dim.iter().cloned().fold(0.0, f64::max);
            (diag.active_units, mean, max)
        };

        let record = sums.into_record(epoch, &weights, active_units, kl_mean, kl_max);
        on_epoch(&record, &model)?;
        history.records.push(record);
    }
    Ok((model, history))
}

#[derive(Default)]
struct LossSums {
    rows: f64,
    total: f64,
    rec: f64,
    ma: f64,
    rep: f64,
    iem: f64,
}

impl LossSums {
    fn add(&mut self, b: &LossBreakdown, rows: usize) {
        let w = rows as f64;
        self.rows += w;
        self.total += w * b.total;
        self.rec += w * b.rec;
        self.ma += w * b.ma;
        self.rep += w * b.rep;
        self.iem += w * b.iem;
    }

    fn into_record(
        self,
        epoch: usize,
        weights: &LossWeights,
        active_units: usize,
        kl_per_dim_mean: f64,
        kl_per_dim_max: f64,
    ) -> EpochRecord {
        let n = self.rows.max(1.0);
        EpochRecord {
            epoch,
            total: self.total / n,
            rec: self.rec / n,
            ma: self.ma / n,
            rep: self.rep / n,
            iem: self.iem / n,
            beta: weights.beta,
            lambda: weights.lambda,
            active_units,
            kl_per_dim_mean,
            kl_per_dim_max,
        }
    }
}

/// Latent training set for the final classifier.
#[derive(Debug, Clone)]
pub struct LatentDataset {
    pub features: Matrix,
    /// Global class ids.
    pub labels: Vec<usize>,
}

/// Builds the final classifier's training set: posterior means of
/// seen-class training images, plus reparameterized samples of each unseen
/// class's encoded attribute.
pub fn build_classifier_trainset(
    model: &AcmrModel,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<LatentDataset> {
    let latent = model.latent_dim();
    let n_seen = ds.train_idx().len();
    let n_unseen = ds.unseen_classes().len() * cfg.unseen_samples_per_class;
    let mut features = Matrix::zeros(n_seen + n_unseen, latent);
    let mut labels = Vec::with_capacity(n_seen + n_unseen);

    let mut row = 0;
    for chunk in ds.train_idx().chunks(512) {
        let x = ds.gather_visual(chunk)?;
        let lat = model.visual.encode(&x)?;
        for (r, &i) in chunk.iter().enumerate() {
            features.row_mut(row).copy_from_slice(lat.mu.row(r));
            labels.push(ds.label(i));
            row += 1;
        }
    }

    for &class in ds.unseen_classes() {
        let attr = Matrix::from_vec(1, ds.d_attr(), ds.attribute_row(class)?.to_vec())?;
        let lat = model.semantic.encode(&attr)?;
        let sigma = lat.sigma();
        let mut rng = seeded_rng(cfg.seed, "classifier_sampling", &[class as u64]);
        let noise = standard_normal(cfg.unseen_samples_per_class, latent, &mut rng);
        for s in 0..cfg.unseen_samples_per_class {
            let out = features.row_mut(row);
            for (k, o) in out.iter_mut().enumerate() {
                *o = lat.mu.get(0, k) + sigma.get(0, k) * noise.get(s, k);
            }
            labels.push(class);
            row += 1;
        }
    }

    Ok(LatentDataset { features, labels })
}

/// The final softmax classifier: one linear layer over every class; the
/// softmax nonlinearity lives inside the cross-entropy loss.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    pub layer: DenseLayer,
}

impl SoftmaxClassifier {
    pub fn num_classes(&self) -> usize {
        self.layer.out_dim()
    }

    pub fn logits(&self, latents: &Matrix) -> Result<Matrix> {
        self.layer.forward_only(latents)
    }

    pub fn predict(&self, latents: &Matrix) -> Result<Vec<usize>> {
        Ok(crate::vsa::argmax_rows(&self.logits(latents)?))
    }
}

/// Trains the final classifier over all classes on the latent dataset.
pub fn train_final_classifier(
    latents: &LatentDataset,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<SoftmaxClassifier> {
    cfg.validate()?;
    if latents.labels.is_empty() {
        return Err(CoreError::Empty {
            what: "classifier training set".into(),
        });
    }
    let latent_dim = latents.features.cols();
    let mut rng = seeded_rng(cfg.seed, "classifier_init", &[]);
    let mut layer = DenseLayer::new(latent_dim, num_classes, Activation::Identity, &mut rng);
    let mut adam = LayerAdam::for_layer(&layer, AdamParams::with_lr(cfg.lr_classifier));

    let mut order: Vec<usize> = (0..latents.labels.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(cfg.seed, "classifier_shuffle", &[epoch as u64]);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch_size_classifier).enumerate() {
            let x = latents.features.gather_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| latents.labels[i]).collect();
            let (logits, cache) = layer.forward(&x)?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: bi,
                    detail: format!("classifier loss = {loss}"),
                });
            }
            layer.zero_grads();
            layer.backward(&d_logits, &cache)?;
            adam.step("classifier", &mut layer)?;
        }
    }
    Ok(SoftmaxClassifier { layer })
}

/// Accuracy of the classifier on a latent dataset.
pub fn classifier_accuracy(clf: &SoftmaxClassifier, latents: &LatentDataset) -> Result<f64> {
    let preds = clf.predict(&latents.features)?;
    let correct = preds
        .iter()
        .zip(&latents.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / latents.labels.len().max(1) as f64)
}
