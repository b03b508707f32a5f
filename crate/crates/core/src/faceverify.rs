//! Face verification: penultimate-layer embeddings, cosine-similarity
//! verification with an EER-calibrated threshold, margin-loss classifier
//! training, and dodging/impersonate attacks.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AdvResult, AttackConfig, Objective};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::loss::{ce_training_loss, one_hot_rows};
use crate::model::{ClassifierModel, Gradients, Layer, LayerGrad, Value};
use crate::rng::Rng;
use crate::training::{normal_augment, sgd_step, TrainConfig};

/// A penultimate-layer feature vector tied to its source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Array1<f32>,
    pub sample_id: String,
}

/// Penultimate activations for every sample, unnormalized.
pub fn embed(model: &ClassifierModel, x: &ImageBatch) -> Result<Vec<Embedding>> {
    let features = model.embedding(x);
    Ok(features
        .axis_iter(Axis(0))
        .zip(x.ids().iter())
        .map(|(row, id)| Embedding {
            vector: row.to_owned(),
            sample_id: id.clone(),
        })
        .collect())
}

/// Cosine similarity in `[-1, 1]`. Embeddings are normalized here and only
/// here; a zero vector yields 0 with a warning.
pub fn cosine_sim(a: &Embedding, b: &Embedding) -> f32 {
    cosine_of(&a.vector.view(), &b.vector.view())
}

fn cosine_of(a: &ndarray::ArrayView1<f32>, b: &ndarray::ArrayView1<f32>) -> f32 {
    let na: f64 = a.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine_sim on a zero embedding; returning 0");
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    (dot / (na * nb)) as f32
}

/// One verification pair, referencing samples by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolPair {
    pub id1: String,
    pub id2: String,
    pub same: bool,
}

/// Calibration and evaluation pair lists over disjoint identity sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairProtocol {
    pub calibration: Vec<ProtocolPair>,
    pub evaluation: Vec<ProtocolPair>,
}

/// Write pairs as `id1,id2,flag` lines (flag 1 for same identity).
pub fn save_pairs(pairs: &[ProtocolPair], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.id1, p.id2, u8::from(p.same)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<ProtocolPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::DatasetFormat(format!(
                "pair line {}: expected id1,id2,flag",
                lineno + 1
            )));
        }
        let same = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::DatasetFormat(format!(
                    "pair line {}: flag {other:?} is not 0/1",
                    lineno + 1
                )))
            }
        };
        pairs.push(ProtocolPair {
            id1: fields[0].trim().to_string(),
            id2: fields[1].trim().to_string(),
            same,
        });
    }
    Ok(pairs)
}

/// Resolve pair sample ids against an image bank.
pub fn pair_indices(bank: &ImageBatch, pairs: &[ProtocolPair]) -> Result<Vec<(usize, usize, bool)>> {
    let lookup: HashMap<&str, usize> = bank
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    pairs
        .iter()
        .map(|p| {
            let a = *lookup.get(p.id1.as_str()).ok_or_else(|| {
                Error::DatasetFormat(format!("pair references unknown sample {}", p.id1))
            })?;
            let b = *lookup.get(p.id2.as_str()).ok_or_else(|| {
                Error::DatasetFormat(format!("pair references unknown sample {}", p.id2))
            })?;
            Ok((a, b, p.same))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    PlainSoftmax,
    AmSoftmax,
    Aaml,
}

/// Margin-loss head configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginLossConfig {
    pub kind: MarginKind,
    pub scale: f32,
    pub margin: f32,
}

impl MarginLossConfig {
    pub fn plain() -> Self {
        MarginLossConfig {
            kind: MarginKind::PlainSoftmax,
            scale: 1.0,
            margin: 0.0,
        }
    }

    pub fn am_softmax() -> Self {
        MarginLossConfig {
            kind: MarginKind::AmSoftmax,
            scale: 30.0,
            margin: 0.35,
        }
    }

    pub fn aaml() -> Self {
        MarginLossConfig {
            kind: MarginKind::Aaml,
            scale: 30.0,
            margin: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "scale",
                reason: format!("{} must be positive", self.scale),
            });
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidParameter {
                name: "margin",
                reason: format!("{} must be non-negative", self.margin),
            });
        }
        Ok(())
    }
}

/// Margin logits from embeddings and class weights.
///
/// With normalized embedding `u` and class weights `v_j`, the cosine is
/// `c_j = u . v_j` and the logits are `s * c_j` except at the true class:
/// AM-Softmax uses `s * (c_y - m)`; AAML uses `s * cos(theta_y + m)` with the
/// monotonic fallback `s * (c_y - m sin m)` once `theta_y + m` exceeds pi/2.
pub fn margin_logits(
    emb: &Array2<f32>,
    weights: &Array2<f32>,
    labels: &[u32],
    cfg: &MarginLossConfig,
) -> Result<Array2<f32>> {
    let (logits, _) = margin_forward(emb, weights, labels, cfg)?;
    Ok(logits)
}

struct MarginCache {
    unit_emb: Array2<f32>,
    unit_w: Array2<f32>,
    emb_norm: Vec<f64>,
    w_norm: Vec<f64>,
    cos: Array2<f32>,
}

fn margin_forward(
    emb: &Array2<f32>,
    weights: &Array2<f32>,
    labels: &[u32],
    cfg: &MarginLossConfig,
) -> Result<(Array2<f32>, MarginCache)> {
    cfg.validate()?;
    let (n, d) = (emb.nrows(), emb.ncols());
    let k = weights.nrows();
    if weights.ncols() != d || labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: "margin head",
            expected: format!("emb (n,{d}), weights (K,{d}), {n} labels"),
            got: format!("weights {:?}, {} labels", weights.shape(), labels.len()),
        });
    }
    let (unit_emb, emb_norm) = normalize_rows(emb);
    let (unit_w, w_norm) = normalize_rows(weights);
    let cos = unit_emb.dot(&unit_w.t());
    let mut logits = cos.mapv(|c| c * cfg.scale);
    let m = cfg.margin;
    for (row, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= k {
            return Err(Error::ClassOutOfRange {
                index: y,
                class_count: k,
            });
        }
        let c = cos[[row, y]];
        logits[[row, y]] = cfg.scale
            * match cfg.kind {
                MarginKind::PlainSoftmax => c,
                MarginKind::AmSoftmax => c - m,
                MarginKind::Aaml => aaml_phi(c, m),
            };
    }
    Ok((
        logits,
        MarginCache {
            unit_emb,
            unit_w,
            emb_norm,
            w_norm,
            cos,
        },
    ))
}

fn aaml_phi(c: f32, m: f32) -> f32 {
    if c < m.sin() {
        // theta + m past pi/2: monotonic surrogate.
        c - m * m.sin()
    } else {
        let c = c.clamp(-1.0, 1.0);
        let sin_theta = (1.0 - c * c).max(0.0).sqrt();
        c * m.cos() - sin_theta * m.sin()
    }
}

fn aaml_phi_grad(c: f32, m: f32) -> f32 {
    if c < m.sin() {
        1.0
    } else {
        let c = c.clamp(-1.0 + 1e-6, 1.0 - 1e-6);
        let sin_theta = (1.0 - c * c).sqrt();
        m.cos() + c * m.sin() / sin_theta
    }
}

fn normalize_rows(x: &Array2<f32>) -> (Array2<f32>, Vec<f64>) {
    let mut out = Array2::<f32>::zeros(x.raw_dim());
    let mut norms = Vec::with_capacity(x.nrows());
    for (mut o, row) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
        let n: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        let n = n.max(1e-12);
        norms.push(n);
        let inv = (1.0 / n) as f32;
        o.assign(&row.mapv(|v| v * inv));
    }
    (out, norms)
}

/// Gradients of the margin logits w.r.t. the raw embeddings and class
/// weights, given `d loss / d logits`.
fn margin_backward(
    cache: &MarginCache,
    labels: &[u32],
    cfg: &MarginLossConfig,
    d_logits: &Array2<f32>,
) -> (Array2<f32>, Array2<f32>) {
    let n = cache.unit_emb.nrows();
    let k = cache.unit_w.nrows();
    // d loss / d cos, folding in scale and the true-class margin slope.
    let mut d_cos = d_logits.mapv(|v| v * cfg.scale);
    if cfg.kind == MarginKind::Aaml {
        for (row, &y) in labels.iter().enumerate() {
            let y = y as usize;
            d_cos[[row, y]] *= aaml_phi_grad(cache.cos[[row, y]], cfg.margin);
        }
    }
    // c_j = u . v_j with u = e/|e|, v_j = w_j/|w_j|:
    //   dc_j/de   = (v_j - c_j u) / |e|
    //   dc_j/dw_j = (u - c_j v_j) / |w_j|
    let mut d_emb = Array2::<f32>::zeros(cache.unit_emb.raw_dim());
    let mut d_w = Array2::<f32>::zeros(cache.unit_w.raw_dim());
    for row in 0..n {
        let u = cache.unit_emb.row(row);
        let inv_e = (1.0 / cache.emb_norm[row]) as f32;
        for j in 0..k {
            let g = d_cos[[row, j]];
            if g == 0.0 {
                continue;
            }
            let v = cache.unit_w.row(j);
            let c = cache.cos[[row, j]];
            let inv_w = (1.0 / cache.w_norm[j]) as f32;
            for t in 0..u.len() {
                d_emb[[row, t]] += g * (v[t] - c * u[t]) * inv_e;
                d_w[[j, t]] += g * (u[t] - c * v[t]) * inv_w;
            }
        }
    }
    (d_emb, d_w)
}

/// Mean margin cross-entropy loss of a batch, for tests and logging.
pub fn margin_loss(
    emb: &Array2<f32>,
    weights: &Array2<f32>,
    labels: &[u32],
    cfg: &MarginLossConfig,
) -> Result<f64> {
    let logits = margin_logits(emb, weights, labels, cfg)?;
    let probs = crate::label::softmax_batch(logits.view())?;
    let mut acc = 0.0;
    for (row, &y) in labels.iter().enumerate() {
        acc -= f64::from(probs.probs()[[row, y as usize]])
            .max(crate::label::CE_FLOOR)
            .ln();
    }
    Ok(acc / labels.len().max(1) as f64)
}

/// Train a facial classifier. Plain softmax is ordinary cross-entropy on the
/// logits; the margin kinds apply their head to the penultimate embedding
/// and the final dense weights (the final bias stays zero).
pub fn train_face_classifier(
    model: &mut ClassifierModel,
    train: &Dataset,
    test: Option<&Dataset>,
    margin: &MarginLossConfig,
    cfg: &TrainConfig,
) -> Result<crate::training::TrainLog> {
    margin.validate()?;
    if margin.kind == MarginKind::PlainSoftmax {
        return crate::training::train_normal(model, train, test, cfg);
    }
    cfg.validate()?;
    if train.class_count() < 2 {
        return Err(Error::InvalidParameter {
            name: "dataset",
            reason: "margin training needs at least 2 identities".into(),
        });
    }
    if train.class_count() != model.class_count() {
        return Err(Error::ShapeMismatch {
            context: "identity count",
            expected: format!("{}", model.class_count()),
            got: format!("{}", train.class_count()),
        });
    }

    // Margin heads have no bias; zero it once so checkpoints are faithful.
    let boundary = model.penultimate_boundary();
    if let Layer::Dense { bias, .. } = &mut model.layers_mut()[boundary] {
        bias.fill(0.0);
    }

    let labels_all = train.labels().to_vec();
    let root = Rng::new(cfg.seed, "train");
    let mut velocity = Gradients::zeros_like(model);
    let mut log = crate::training::TrainLog::default();
    let n = train.len();

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
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
            let labels: Vec<u32> = chunk.iter().map(|&i| labels_all[i]).collect();

            let trace = model.forward_trace(x.data());
            let emb = trace.values[boundary].as_feat().clone();
            let head_weights = match &model.layers()[boundary] {
                Layer::Dense { weight, .. } => weight.clone(),
                _ => unreachable!("penultimate boundary is a dense layer"),
            };
            let (logits, cache) = margin_forward(&emb, &head_weights, &labels, margin)?;
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            let targets = one_hot_rows(&labels, model.class_count())?;
            let (loss, d_logits) = ce_training_loss(&targets, &logits)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            let (d_emb, d_head_w) = margin_backward(&cache, &labels, margin, &d_logits);

            let (_, grads) = model.backprop_from(&trace, boundary, Value::Feat(d_emb), true);
            let mut grads = grads.expect("requested gradients");
            grads.per_layer[boundary] = Some(LayerGrad::Dense {
                d_weight: d_head_w,
                d_bias: Array1::zeros(model.class_count()),
            });
            sgd_step(model, &grads, &mut velocity, lr, cfg.momentum, cfg.weight_decay);
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }

        let train_accuracy = {
            // Identity accuracy under the cosine head (margin ignored at eval).
            let eval_cfg = MarginLossConfig {
                kind: MarginKind::PlainSoftmax,
                scale: margin.scale,
                margin: 0.0,
            };
            let emb = model.embedding(train.images());
            let head_weights = match &model.layers()[boundary] {
                Layer::Dense { weight, .. } => weight.clone(),
                _ => unreachable!(),
            };
            let zeros = vec![0u32; n];
            let logits = margin_logits(&emb, &head_weights, &zeros, &eval_cfg)?;
            let pred = crate::model::argmax_rows(&logits);
            let hits = pred.iter().zip(labels_all.iter()).filter(|(p, y)| p == y).count();
            Some(hits as f32 / n.max(1) as f32)
        };
        log.epochs.push(crate::training::EpochRecord {
            epoch,
            loss: epoch_loss / seen.max(1) as f64,
            train_accuracy,
            test_accuracy: test.map(|t| crate::training::accuracy(model, t)),
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(log)
}

/// EER calibration result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau: f32,
    pub far: f32,
    pub frr: f32,
    pub eer: f32,
}

/// Choose the accept threshold at the equal error rate on calibration pairs,
/// breaking ties toward the lower threshold.
pub fn calibrate_threshold(
    model: &ClassifierModel,
    bank: &ImageBatch,
    calibration: &[ProtocolPair],
) -> Result<ThresholdReport> {
    let resolved = pair_indices(bank, calibration)?;
    let same_count = resolved.iter().filter(|(_, _, s)| *s).count();
    let diff_count = resolved.len() - same_count;
    if same_count == 0 || diff_count == 0 {
        return Err(Error::InvalidParameter {
            name: "calibration",
            reason: "needs both same-identity and different-identity pairs".into(),
        });
    }
    let features = model.embedding(bank);
    let sims: Vec<(f32, bool)> = resolved
        .iter()
        .map(|&(a, b, same)| {
            (
                cosine_of(&features.row(a), &features.row(b)),
                same,
            )
        })
        .collect();

    // Candidate thresholds: every observed similarity plus one above the max,
    // under the accept-if-similarity >= tau rule.
    let mut candidates: Vec<f32> = sims.iter().map(|&(s, _)| s).collect();
    let max = candidates.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    candidates.push(max + 1.0);
    candidates.sort_by(f32::total_cmp);
    candidates.dedup();

    let mut best: Option<ThresholdReport> = None;
    for &tau in &candidates {
        let far = sims.iter().filter(|&&(s, same)| !same && s >= tau).count() as f32
            / diff_count as f32;
        let frr = sims.iter().filter(|&&(s, same)| same && s < tau).count() as f32
            / same_count as f32;
        let gap = (far - frr).abs();
        let better = match &best {
            None => true,
            Some(b) => gap < (b.far - b.frr).abs() - 1e-12,
        };
        if better {
            best = Some(ThresholdReport {
                tau,
                far,
                frr,
                eer: 0.5 * (far + frr),
            });
        }
    }
    Ok(best.expect("candidate list is non-empty"))
}

/// A black-box verifier: a model plus its calibrated threshold. Attack code
/// sees similarities and decisions only.
#[derive(Debug, Clone)]
pub struct FaceVerifier {
    id: String,
    model: ClassifierModel,
    tau: f32,
}

impl FaceVerifier {
    pub fn new(id: impl Into<String>, model: ClassifierModel, tau: f32) -> Self {
        FaceVerifier {
            id: id.into(),
            model,
            tau,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tau(&self) -> f32 {
        self.tau
    }

    /// Row-wise similarity between two aligned batches.
    pub fn similarities(&self, x1: &ImageBatch, x2: &ImageBatch) -> Vec<f32> {
        let a = self.model.embedding(x1);
        let b = self.model.embedding(x2);
        a.axis_iter(Axis(0))
            .zip(b.axis_iter(Axis(0)))
            .map(|(u, v)| cosine_of(&u, &v))
            .collect()
    }

    /// Same-identity decisions at the calibrated threshold.
    pub fn verify(&self, x1: &ImageBatch, x2: &ImageBatch) -> Vec<bool> {
        self.similarities(x1, x2)
            .into_iter()
            .map(|s| s >= self.tau)
            .collect()
    }
}

/// Dodging: perturb `x` so it no longer verifies against its same-identity
/// reference. Minimizes surrogate cosine similarity with the MI/M-DI2
/// machinery.
pub fn dodging_attack(
    surrogate: &ClassifierModel,
    x: &ImageBatch,
    x_ref: &ImageBatch,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AdvResult> {
    let reference = surrogate.embedding(x_ref);
    run_attack(
        surrogate,
        x,
        &Objective::EmbeddingDodge { reference },
        cfg,
        rng,
    )
}

/// Impersonation: perturb `x` to verify as the different-identity reference.
/// Maximizes surrogate cosine similarity.
pub fn impersonate_attack(
    surrogate: &ClassifierModel,
    x: &ImageBatch,
    x_ref: &ImageBatch,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AdvResult> {
    let reference = surrogate.embedding(x_ref);
    run_attack(
        surrogate,
        x,
        &Objective::EmbeddingImpersonate { reference },
        cfg,
        rng,
    )
}

/// The synthetic identity data: a training split over the calibration
/// identities, a protocol image bank covering every identity, and the pair
/// protocol itself.
#[derive(Debug, Clone)]
pub struct ToyIdentityData {
    pub train: Dataset,
    pub bank: ImageBatch,
    pub bank_identity: Vec<u32>,
    pub protocol: PairProtocol,
}

/// Build the desk-scale identity dataset. Identities split in half:
/// the first half backs both classifier training and threshold calibration,
/// the second half is reserved for evaluation pairs, so calibration and
/// evaluation identities are disjoint.
pub fn build_toy_identity_dataset(
    n_ids: usize,
    per_id: usize,
    (height, width): (usize, usize),
    rng: &mut Rng,
) -> Result<ToyIdentityData> {
    if n_ids < 4 {
        return Err(Error::InvalidParameter {
            name: "n_ids",
            reason: "need at least 4 identities (2 calibration + 2 evaluation)".into(),
        });
    }
    if per_id < 2 {
        return Err(Error::InvalidParameter {
            name: "per_id",
            reason: "need at least 2 samples per identity".into(),
        });
    }
    let n_cal = n_ids / 2;
    let mut proto_rng = rng.fork("identity-prototypes");
    let prototypes: Vec<Array4<f32>> = (0..n_ids)
        .map(|_| identity_prototype(height, width, &mut proto_rng))
        .collect();

    // Training split: per_id samples of each calibration identity.
    let mut train_rng = rng.fork("train-samples");
    let mut data = Array4::<f32>::zeros((n_cal * per_id, 1, height, width));
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for id in 0..n_cal {
        for s in 0..per_id {
            let img = jitter_identity(&prototypes[id], &mut train_rng);
            data.index_axis_mut(Axis(0), id * per_id + s)
                .assign(&img.index_axis(Axis(0), 0));
            labels.push(id as u32);
            ids.push(format!("train_id{id}_s{s}"));
        }
    }
    let train = Dataset::new(ImageBatch::new(data, ids)?, labels, n_cal, Split::Train)?;

    // Protocol bank: 4 fresh samples per identity.
    const BANK_PER_ID: usize = 4;
    let mut bank_rng = rng.fork("bank-samples");
    let mut bank_data = Array4::<f32>::zeros((n_ids * BANK_PER_ID, 1, height, width));
    let mut bank_ids = Vec::new();
    let mut bank_identity = Vec::new();
    for id in 0..n_ids {
        for s in 0..BANK_PER_ID {
            let img = jitter_identity(&prototypes[id], &mut bank_rng);
            bank_data
                .index_axis_mut(Axis(0), id * BANK_PER_ID + s)
                .assign(&img.index_axis(Axis(0), 0));
            bank_ids.push(format!("id{id}_s{s}"));
            bank_identity.push(id as u32);
        }
    }
    let bank = ImageBatch::new(bank_data, bank_ids)?;

    let make_pairs = |ids: std::ops::Range<usize>| -> Vec<ProtocolPair> {
        let list: Vec<usize> = ids.collect();
        let mut pairs = Vec::new();
        for (pos, &id) in list.iter().enumerate() {
            // Two same-identity pairs per identity.
            pairs.push(ProtocolPair {
                id1: format!("id{id}_s0"),
                id2: format!("id{id}_s1"),
                same: true,
            });
            pairs.push(ProtocolPair {
                id1: format!("id{id}_s2"),
                id2: format!("id{id}_s3"),
                same: true,
            });
            // Two different-identity pairs against the next identity in the split.
            let other = list[(pos + 1) % list.len()];
            if other != id {
                pairs.push(ProtocolPair {
                    id1: format!("id{id}_s0"),
                    id2: format!("id{other}_s2"),
                    same: false,
                });
                pairs.push(ProtocolPair {
                    id1: format!("id{id}_s1"),
                    id2: format!("id{other}_s3"),
                    same: false,
                });
            }
        }
        pairs
    };

    let protocol = PairProtocol {
        calibration: make_pairs(0..n_cal),
        evaluation: make_pairs(n_cal..n_ids),
    };
    Ok(ToyIdentityData {
        train,
        bank,
        bank_identity,
        protocol,
    })
}

fn identity_prototype(h: usize, w: usize, rng: &mut Rng) -> Array4<f32> {
    // Shared facial structure plus identity-specific detail bumps.
    let mut img = Array4::<f32>::zeros((1, 1, h, w));
    for _ in 0..4 {
        let cy = rng.next_f64() * h as f64;
        let cx = rng.next_f64() * w as f64;
        let sigma = (h.min(w) as f64 / 6.0) * (0.6 + 0.8 * rng.next_f64());
        let amp = 0.4 + 0.6 * rng.next_f64();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[[0, 0, y, x]] += (amp * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
            }
        }
    }
    let max = img.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    img.mapv_inplace(|v| 0.85 * v / max);
    img
}

fn jitter_identity(proto: &Array4<f32>, rng: &mut Rng) -> Array4<f32> {
    let (_, _, h, w) = crate::model::dims4(proto);
    let dy = rng.range_inclusive(0, 2) as i64 - 1;
    let dx = rng.range_inclusive(0, 2) as i64 - 1;
    let gain = 0.9 + 0.2 * rng.next_f32();
    let noise_sd = 0.05f32;
    let mut out = Array4::<f32>::zeros(proto.raw_dim());
    for y in 0..h {
        for x in 0..w {
            let sy = y as i64 - dy;
            let sx = x as i64 - dx;
            let base = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                proto[[0, 0, sy as usize, sx as usize]]
            } else {
                0.0
            };
            out[[0, 0, y, x]] = (base * gain + noise_sd * rng.normal() as f32).clamp(0.0, 1.0);
        }
    }
    out
}
