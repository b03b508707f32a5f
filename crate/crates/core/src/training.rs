//! Training loops: normal surrogate training, dark-surrogate distillation
//! over mixing-augmented inputs, and slightly-robust adversarial training.
//!
//! All three run through one engine so that degenerate configurations reduce
//! to each other exactly (same shuffle and augmentation streams, same update
//! order). The optimizer is SGD with momentum and step decay.

use std::time::Instant;

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, Objective};
use crate::augment::{
    cutmix, cutout, mixup, partner_permutation, pseudo_label, sample_lambda, MixStrategy,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::label::{cross_entropy_mean, LabelDistribution};
use crate::labeling::{dark_label, reverse_dark, shuffle_dark, smooth_label, LabelStrategy, LabelStrategyKind};
use crate::loss::{ce_training_loss, one_hot_rows};
use crate::model::{ClassifierModel, Gradients, Layer, LayerGrad};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    pub mix: MixStrategy,
    /// Beta(alpha, alpha) parameter for Mixup/CutMix lambda draws.
    pub alpha: f64,
    /// Cutout square side; defaults to half the image height.
    pub cutout_side: Option<usize>,
    pub label_strategy: LabelStrategy,
    /// Random horizontal flip plus pad-and-crop, applied before mixing.
    pub augment_normal: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            lr_decay_epochs: vec![15, 25],
            lr_decay_factor: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            mix: MixStrategy::None,
            alpha: 1.0,
            cutout_side: None,
            label_strategy: LabelStrategy::default(),
            augment_normal: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                reason: format!("{} must be positive", self.learning_rate),
            });
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter {
                name: "lr_decay_epochs",
                reason: "must be strictly increasing".into(),
            });
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("{} must be positive", self.alpha),
            });
        }
        self.label_strategy.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: Option<f32>,
    pub test_accuracy: Option<f32>,
    pub wall_ms: u64,
}

/// One record per epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Top-1 accuracy of a model on a dataset. Reads the dataset's labels.
pub fn accuracy(model: &ClassifierModel, dataset: &Dataset) -> f32 {
    let predictions = model.predict(dataset.images());
    let labels = dataset.labels();
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, y)| p == y)
        .count();
    hits as f32 / labels.len().max(1) as f32
}

/// Mean Algorithm-1 distillation loss on one batch:
/// `CE(softmax(f(x; teacher) / T), softmax(f(x; student) / T))`.
pub fn dsm_batch_loss(
    student: &ClassifierModel,
    teacher: &ClassifierModel,
    x: &ImageBatch,
    temperature: f32,
) -> Result<f64> {
    let soft = dark_label(teacher, x, temperature)?;
    let student_probs = crate::label::softmax_batch_with_temperature(
        student.logits(x).view(),
        temperature,
    )?;
    cross_entropy_mean(&soft, &student_probs)
}

/// Normal surrogate training: one-hot cross-entropy with crop/flip
/// augmentation only (the mixing strategy must be `none`).
pub fn train_normal(
    model: &mut ClassifierModel,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if cfg.mix != MixStrategy::None {
        return Err(Error::InvalidParameter {
            name: "mix",
            reason: "normal training applies only crop/flip augmentation".into(),
        });
    }
    run_training(model, Trainer::Normal, train, test, cfg)
}

/// Dark-surrogate training: per batch, apply the configured mixing
/// augmentation, label the mixed images with the configured strategy, and
/// descend the mean cross-entropy. With the `dark` strategy the ground-truth
/// labels of `train` are never read.
pub fn train_dsm(
    student: &mut ClassifierModel,
    teacher: Option<&ClassifierModel>,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if cfg.label_strategy.kind.needs_teacher() {
        let teacher = teacher.ok_or_else(|| Error::InvalidParameter {
            name: "teacher",
            reason: "dark labeling strategies require a teacher model".into(),
        })?;
        if teacher.class_count() != train.class_count() {
            return Err(Error::ShapeMismatch {
                context: "teacher class count",
                expected: format!("{}", train.class_count()),
                got: format!("{}", teacher.class_count()),
            });
        }
    }
    run_training(student, Trainer::Dsm { teacher }, train, test, cfg)
}

/// Slightly-robust training: each batch is replaced by untargeted
/// iterative-sign adversarial examples of the current model (5 steps, step
/// `eps_r / 4`, no random start) before the normal cross-entropy step.
pub fn train_slightly_robust(
    model: &mut ClassifierModel,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    eps_r: f32,
) -> Result<TrainLog> {
    if eps_r < 0.0 || eps_r > 1.0 {
        return Err(Error::InvalidParameter {
            name: "eps_r",
            reason: format!("{eps_r} outside [0,1]"),
        });
    }
    if cfg.mix != MixStrategy::None {
        return Err(Error::InvalidParameter {
            name: "mix",
            reason: "robust training applies only crop/flip augmentation".into(),
        });
    }
    run_training(model, Trainer::Robust { eps_r }, train, test, cfg)
}

enum Trainer<'a> {
    Normal,
    Dsm { teacher: Option<&'a ClassifierModel> },
    Robust { eps_r: f32 },
}

fn run_training(
    model: &mut ClassifierModel,
    trainer: Trainer<'_>,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.class_count() != model.class_count() {
        return Err(Error::ShapeMismatch {
            context: "dataset class count",
            expected: format!("{}", model.class_count()),
            got: format!("{}", train.class_count()),
        });
    }

    let dark_only = matches!(&trainer, Trainer::Dsm { .. })
        && cfg.label_strategy.kind == LabelStrategyKind::Dark;
    // The dark strategy must never consume ground-truth labels.
    let labels_all: Option<Vec<u32>> = if dark_only {
        None
    } else {
        Some(train.labels().to_vec())
    };

    let root = Rng::new(cfg.seed, "train");
    let mut velocity = Gradients::zeros_like(model);
    let mut log = TrainLog::default();
    let n = train.len();
    let k = train.class_count();
    let (_, h, _) = train.images().sample_shape();
    let cutout_side = cfg.cutout_side.unwrap_or((h / 2).max(1));

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let decay_steps = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        let lr = cfg.learning_rate * cfg.lr_decay_factor.powi(decay_steps as i32);

        let mut order: Vec<usize> = (0..n).collect();
        root.fork(&format!("shuffle/e{epoch}")).shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = root.fork(&format!("aug/e{epoch}/b{batch_idx}"));
            let mut x = train.images().select(chunk)?;
            if cfg.augment_normal {
                x = normal_augment(&x, &mut rng)?;
            }
            let batch_labels: Option<Vec<u32>> = labels_all
                .as_ref()
                .map(|all| chunk.iter().map(|&i| all[i]).collect());

            let (x_final, targets) = match &trainer {
                Trainer::Normal => {
                    let labels = batch_labels.as_ref().expect("normal training reads labels");
                    (x, one_hot_rows(labels, k)?)
                }
                Trainer::Robust { eps_r } => {
                    let labels = batch_labels.as_ref().expect("robust training reads labels");
                    let attack_cfg = AttackConfig {
                        epsilon: *eps_r,
                        beta: (*eps_r / 4.0).max(f32::MIN_POSITIVE),
                        mu: 0.0,
                        iterations: 5,
                        p_t: 0.0,
                        diversity: false,
                    };
                    let adv = run_attack(
                        model,
                        &x,
                        &Objective::UntargetedCe {
                            labels: labels.clone(),
                        },
                        &attack_cfg,
                        &mut rng.fork("inner-attack"),
                    )?;
                    (adv.adversarial, one_hot_rows(labels, k)?)
                }
                Trainer::Dsm { teacher } => dsm_batch(
                    &x,
                    batch_labels.as_deref(),
                    *teacher,
                    cfg,
                    k,
                    cutout_side,
                    &mut rng,
                )?,
            };

            let trace = model.forward_trace(x_final.data());
            if trace.logits().iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            let (loss, d_logits) = ce_training_loss(&targets, trace.logits())?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            let (_, grads) = model.backward(&trace, d_logits);
            sgd_step(model, &grads, &mut velocity, lr, cfg.momentum, cfg.weight_decay);
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }

        let train_accuracy = labels_all.as_ref().map(|all| {
            let predictions = model.predict(train.images());
            let hits = predictions.iter().zip(all.iter()).filter(|(p, y)| p == y).count();
            hits as f32 / all.len().max(1) as f32
        });
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / seen.max(1) as f64,
            train_accuracy,
            test_accuracy: test.map(|t| accuracy(model, t)),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(log)
}

/// Mixing augmentation plus label construction for one DSM batch.
fn dsm_batch(
    x: &ImageBatch,
    labels: Option<&[u32]>,
    teacher: Option<&ClassifierModel>,
    cfg: &TrainConfig,
    k: usize,
    cutout_side: usize,
    rng: &mut Rng,
) -> Result<(ImageBatch, LabelDistribution)> {
    let strategy = cfg.label_strategy;
    let n = x.len();

    // Step 1: mix. For Mixup/CutMix the partner is a random permutation of
    // the batch avoiding self-pairs.
    let (x_mix, lambda, partners) = match cfg.mix {
        MixStrategy::None => (x.clone(), 1.0f32, None),
        MixStrategy::Cutout => {
            let res = cutout(x, cutout_side, &mut rng.fork("cutout"))?;
            // Cutout keeps the original label in the non-teacher baselines.
            (res.mixed, 1.0, None)
        }
        MixStrategy::Mixup => {
            let perm = partner_permutation(n, &mut rng.fork("partner"));
            let x_ref = x.select(&perm)?;
            let lambda = sample_lambda(cfg.alpha, &mut rng.fork("lambda"))? as f32;
            let res = mixup(x, &x_ref, perm.clone(), lambda)?;
            (res.mixed, res.lambda, Some(perm))
        }
        MixStrategy::Cutmix => {
            let perm = partner_permutation(n, &mut rng.fork("partner"));
            let x_ref = x.select(&perm)?;
            let res = cutmix(x, &x_ref, perm.clone(), cfg.alpha, &mut rng.fork("rect"))?;
            (res.mixed, res.lambda, Some(perm))
        }
    };

    // Step 2: label the mixed batch.
    let targets = match strategy.kind {
        LabelStrategyKind::Dark => {
            let teacher = teacher.expect("validated by train_dsm");
            dark_label(teacher, &x_mix, strategy.temperature)?
        }
        LabelStrategyKind::DarkShuffled | LabelStrategyKind::DarkReversed => {
            let teacher = teacher.expect("validated by train_dsm");
            let soft = dark_label(teacher, &x_mix, strategy.temperature)?;
            let labels = labels.expect("shuffled/reversed strategies read labels");
            let mut rows = Array2::<f32>::zeros((n, k));
            for i in 0..n {
                let y = labels[i] as usize;
                let row = soft.row(i);
                let new_row = if strategy.kind == LabelStrategyKind::DarkShuffled {
                    shuffle_dark(row, y, &mut rng.fork(&format!("shuffle-label/{i}")))?
                } else {
                    reverse_dark(row, y)?
                };
                rows.row_mut(i).assign(&new_row);
            }
            LabelDistribution::new(rows)?
        }
        LabelStrategyKind::OneHot | LabelStrategyKind::Smooth => {
            let labels = labels.expect("hard strategies read labels");
            let base = |y: usize| -> Result<LabelDistribution> {
                match strategy.kind {
                    LabelStrategyKind::OneHot => crate::labeling::one_hot(y, k),
                    _ => smooth_label(y, k, strategy.gamma),
                }
            };
            let mut rows = Array2::<f32>::zeros((n, k));
            for i in 0..n {
                let y = labels[i] as usize;
                match (&partners, strategy.kind) {
                    // Mixed pairs take the lambda-blended pseudo label; with
                    // one-hot bases this is exactly pseudo_label.
                    (Some(perm), LabelStrategyKind::OneHot) => {
                        let y_p = labels[perm[i]] as usize;
                        rows.row_mut(i)
                            .assign(&pseudo_label(lambda, y, y_p, k)?.row(0));
                    }
                    (Some(perm), _) => {
                        let y_p = labels[perm[i]] as usize;
                        let a = base(y)?;
                        let b = base(y_p)?;
                        let blended = a.row(0).mapv(|v| v * lambda)
                            + b.row(0).mapv(|v| v * (1.0 - lambda));
                        rows.row_mut(i).assign(&blended);
                    }
                    (None, _) => rows.row_mut(i).assign(&base(y)?.row(0)),
                }
            }
            LabelDistribution::new(rows)?
        }
    };
    Ok((x_mix, targets))
}

/// SGD with momentum and decoupled-from-nothing weight decay, in the
/// conventional form `v = mu v + (g + wd w); w -= lr v`.
pub(crate) fn sgd_step(
    model: &mut ClassifierModel,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) {
    for ((layer, grad), vel) in model
        .layers_mut()
        .iter_mut()
        .zip(grads.per_layer.iter())
        .zip(velocity.per_layer.iter_mut())
    {
        match (layer, grad, vel) {
            (
                Layer::Conv { weight, bias },
                Some(LayerGrad::Conv { d_weight, d_bias }),
                Some(LayerGrad::Conv {
                    d_weight: vw,
                    d_bias: vb,
                }),
            ) => {
                update(weight.as_slice_mut().unwrap(), d_weight.as_slice().unwrap(), vw.as_slice_mut().unwrap(), lr, momentum, weight_decay);
                update(bias.as_slice_mut().unwrap(), d_bias.as_slice().unwrap(), vb.as_slice_mut().unwrap(), lr, momentum, 0.0);
            }
            (
                Layer::Dense { weight, bias },
                Some(LayerGrad::Dense { d_weight, d_bias }),
                Some(LayerGrad::Dense {
                    d_weight: vw,
                    d_bias: vb,
                }),
            ) => {
                update(weight.as_slice_mut().unwrap(), d_weight.as_slice().unwrap(), vw.as_slice_mut().unwrap(), lr, momentum, weight_decay);
                update(bias.as_slice_mut().unwrap(), d_bias.as_slice().unwrap(), vb.as_slice_mut().unwrap(), lr, momentum, 0.0);
            }
            (_, None, None) => {}
            _ => unreachable!("gradient layout matches the model"),
        }
    }
}

fn update(w: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, momentum: f32, weight_decay: f32) {
    for i in 0..w.len() {
        v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
        w[i] -= lr * v[i];
    }
}

/// Random horizontal flip plus pad-1-and-crop, per sample.
pub fn normal_augment(x: &ImageBatch, rng: &mut Rng) -> Result<ImageBatch> {
    let (n, c, h, w) = crate::model::dims4(x.data());
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for s in 0..n {
        let flip = rng.bernoulli(0.5);
        let dy = rng.range_inclusive(0, 2) as i64 - 1;
        let dx = rng.range_inclusive(0, 2) as i64 - 1;
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let sx_raw = if flip { w - 1 - xx } else { xx };
                    let sy = y as i64 + dy;
                    let sx = sx_raw as i64 + dx;
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        out[[s, ch, y, xx]] = x.data()[[s, ch, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    ImageBatch::new(out, x.ids().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_classification, Split, SynthSpec};
    use crate::model::build_model;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            class_count: 4,
            train_per_class: 20,
            test_per_class: 5,
            height: 8,
            width: 8,
            noise_sd: 0.1,
            max_shift: 1,
        }
    }

    fn quick_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay_epochs: vec![],
            weight_decay: 0.0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(1, "t")).unwrap();
        let mut model = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(2, "m")).unwrap();
        let before = model.flat_params();
        let log = train_normal(&mut model, &train, None, &quick_cfg(0, 3)).unwrap();
        assert_eq!(model.flat_params(), before);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(4, "t")).unwrap();
        let cfg = quick_cfg(2, 7);
        let mut a = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(5, "m")).unwrap();
        let mut b = a.clone();
        train_normal(&mut a, &train, None, &cfg).unwrap();
        train_normal(&mut b, &train, None, &cfg).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn separable_two_class_set_reaches_high_accuracy() {
        // Two classes split by mean intensity with a wide margin; a
        // perceptron oracle on the pixel means verifies separability below.
        let n_per = 30;
        let mut rng = Rng::new(6, "sep");
        let mut data = Array4::<f32>::zeros((2 * n_per, 1, 6, 6));
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = (i >= n_per) as usize;
            let base = if class == 0 { 0.2 } else { 0.8 };
            for y in 0..6 {
                for x in 0..6 {
                    data[[i, 0, y, x]] =
                        (base + 0.05 * (rng.next_f32() - 0.5)).clamp(0.0, 1.0);
                }
            }
            labels.push(class as u32);
        }
        // Perceptron oracle over (mean pixel, bias): must converge to zero
        // errors on a separable set.
        let feats: Vec<f32> = (0..2 * n_per)
            .map(|i| data.index_axis(Axis(0), i).mean().unwrap())
            .collect();
        let mut w = (0.0f32, 0.0f32);
        let mut converged = false;
        for _ in 0..100 {
            let mut errors = 0;
            for (f, &y) in feats.iter().zip(labels.iter()) {
                let pred = (w.0 * f + w.1 > 0.0) as u32;
                if pred != y {
                    errors += 1;
                    let sign = if y == 1 { 1.0 } else { -1.0 };
                    w.0 += sign * f;
                    w.1 += sign;
                }
            }
            if errors == 0 {
                converged = true;
                break;
            }
        }
        assert!(converged, "oracle says the set is not separable");

        let images = ImageBatch::with_default_ids(data).unwrap();
        let train = Dataset::new(images, labels, 2, Split::Train).unwrap();
        let mut model = build_model("mlp", 2, (1, 6, 6), &mut Rng::new(7, "m")).unwrap();
        let log = train_normal(&mut model, &train, None, &quick_cfg(20, 8)).unwrap();
        let acc = log.epochs.last().unwrap().train_accuracy.unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn dsm_self_distillation_sits_at_entropy_floor() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(9, "t")).unwrap();
        let mut teacher = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(10, "m")).unwrap();
        train_normal(&mut teacher, &train, None, &quick_cfg(8, 11)).unwrap();

        // Teacher equals student: the distillation loss is the mean entropy
        // CE(p, p), and by Gibbs it is strictly below CE(p, one-hot).
        let x = train.images().select(&(0..32).collect::<Vec<_>>()).unwrap();
        let distill = dsm_batch_loss(&teacher, &teacher, &x, 1.0).unwrap();
        let probs = crate::label::softmax_batch(teacher.logits(&x).view()).unwrap();
        let onehots = one_hot_rows(&teacher.predict(&x), 4).unwrap();
        let vs_onehot = cross_entropy_mean(&probs, &onehots).unwrap();
        let entropy = cross_entropy_mean(&probs, &probs).unwrap();
        assert!((distill - entropy).abs() < 1e-9);
        assert!(distill < vs_onehot, "{distill} !< {vs_onehot}");
    }

    #[test]
    fn dark_training_never_reads_labels() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(12, "t")).unwrap();
        let teacher = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(13, "m")).unwrap();
        let mut student = build_model("conv_a", 4, (1, 8, 8), &mut Rng::new(14, "m")).unwrap();
        let mut cfg = quick_cfg(1, 15);
        cfg.label_strategy.kind = LabelStrategyKind::Dark;
        cfg.mix = MixStrategy::Cutmix;
        assert_eq!(train.label_accesses(), 0);
        train_dsm(&mut student, Some(&teacher), &train, None, &cfg).unwrap();
        assert_eq!(train.label_accesses(), 0);
    }

    #[test]
    fn dark_vs_shuffled_reach_different_parameters() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(16, "t")).unwrap();
        let mut teacher = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(17, "m")).unwrap();
        train_normal(&mut teacher, &train, None, &quick_cfg(4, 18)).unwrap();
        let init = build_model("conv_a", 4, (1, 8, 8), &mut Rng::new(19, "m")).unwrap();

        let mut cfg = quick_cfg(2, 20);
        cfg.label_strategy.kind = LabelStrategyKind::Dark;
        let mut dark = init.clone();
        train_dsm(&mut dark, Some(&teacher), &train, None, &cfg).unwrap();

        cfg.label_strategy.kind = LabelStrategyKind::DarkShuffled;
        let mut shuffled = init.clone();
        train_dsm(&mut shuffled, Some(&teacher), &train, None, &cfg).unwrap();

        assert!(dark.param_l2_distance(&shuffled) > 0.0);
    }

    #[test]
    fn missing_teacher_is_rejected() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(21, "t")).unwrap();
        let mut student = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(22, "m")).unwrap();
        let mut cfg = quick_cfg(1, 23);
        cfg.label_strategy.kind = LabelStrategyKind::Dark;
        assert!(train_dsm(&mut student, None, &train, None, &cfg).is_err());
    }

    #[test]
    fn cutmix_with_forced_full_lambda_matches_unmixed_loss() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(24, "t")).unwrap();
        let teacher = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(25, "m")).unwrap();
        let student = build_model("conv_a", 4, (1, 8, 8), &mut Rng::new(26, "m")).unwrap();
        let x = train.images().select(&(0..16).collect::<Vec<_>>()).unwrap();
        // A zero-area rectangle is the lambda = 1 degenerate case.
        let perm = partner_permutation(16, &mut Rng::new(27, "p"));
        let x_ref = x.select(&perm).unwrap();
        let rect = crate::augment::Rect { top: 0, bottom: 0, left: 0, right: 0 };
        let mixed = crate::augment::cutmix_with_rect(&x, &x_ref, perm, rect).unwrap();
        assert_eq!(mixed.lambda, 1.0);
        let a = dsm_batch_loss(&student, &teacher, &mixed.mixed, 1.0).unwrap();
        let b = dsm_batch_loss(&student, &teacher, &x, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn robust_zero_budget_matches_normal_trajectory() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(28, "t")).unwrap();
        let cfg = quick_cfg(2, 29);
        let init = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(30, "m")).unwrap();
        let mut normal = init.clone();
        train_normal(&mut normal, &train, None, &cfg).unwrap();
        let mut robust = init.clone();
        train_slightly_robust(&mut robust, &train, None, &cfg, 0.0).unwrap();
        assert_eq!(normal.flat_params(), robust.flat_params());
    }

    #[test]
    fn divergent_learning_rate_aborts_with_diagnostic() {
        let (train, _) = make_classification(&small_spec(), &mut Rng::new(31, "t")).unwrap();
        let mut cfg = quick_cfg(30, 32);
        cfg.learning_rate = 1e30;
        cfg.weight_decay = 1.0;
        let mut model = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(33, "m")).unwrap();
        match train_normal(&mut model, &train, None, &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
