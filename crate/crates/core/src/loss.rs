//! Scalar losses over model outputs and their exact input gradients.

use ndarray::{Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::label::{softmax_batch, LabelDistribution};
use crate::model::{ClassifierModel, Value};

/// Which scalar loss to differentiate. All losses are summed over the batch,
/// so per-sample gradients are independent.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// `sum_s CE(p_s, softmax(f(x_s)))` against given target distributions.
    CrossEntropy { targets: LabelDistribution },
    /// `sum_s f(x_s)_{t_s}`: the raw logit of a target class per sample.
    Logit { targets: Vec<u32> },
    /// `sum_s cos(embed(x_s), r_s)` against fixed reference embeddings.
    CosineToReference { reference: Array2<f32> },
}

/// Exact gradient of the scalar loss w.r.t. input pixels.
pub fn input_gradient(
    model: &ClassifierModel,
    x: &ImageBatch,
    spec: &LossSpec,
) -> Result<Array4<f32>> {
    input_gradient_array(model, x.data(), spec)
}

pub(crate) fn input_gradient_array(
    model: &ClassifierModel,
    x: &Array4<f32>,
    spec: &LossSpec,
) -> Result<Array4<f32>> {
    let trace = model.forward_trace(x);
    match spec {
        LossSpec::CrossEntropy { targets } => {
            let logits = trace.logits();
            check_batch(model, logits.nrows(), targets.len(), targets.class_count())?;
            let d_logits = d_logits_ce(targets, logits)?;
            Ok(model.input_gradient_from_logits(&trace, d_logits))
        }
        LossSpec::Logit { targets } => {
            let logits = trace.logits();
            check_batch(model, logits.nrows(), targets.len(), model.class_count())?;
            let d_logits = d_logits_logit(targets, model.class_count())?;
            Ok(model.input_gradient_from_logits(&trace, d_logits))
        }
        LossSpec::CosineToReference { reference } => {
            let boundary = model.penultimate_boundary();
            let emb = trace.values[boundary].as_feat();
            if emb.raw_dim() != reference.raw_dim() {
                return Err(Error::ShapeMismatch {
                    context: "cosine reference",
                    expected: format!("{:?}", emb.shape()),
                    got: format!("{:?}", reference.shape()),
                });
            }
            let (_, d_emb) = cosine_rows_and_grad(emb, reference);
            Ok(model.backprop_from(&trace, boundary, Value::Feat(d_emb), false).0)
        }
    }
}

/// Scalar value of the loss, for logging and finite-difference checks.
pub fn loss_value(model: &ClassifierModel, x: &Array4<f32>, spec: &LossSpec) -> Result<f64> {
    let trace = model.forward_trace(x);
    match spec {
        LossSpec::CrossEntropy { targets } => {
            let probs = softmax_batch(trace.logits().view())?;
            let mut acc = 0.0;
            for (p, q) in targets
                .probs()
                .axis_iter(Axis(0))
                .zip(probs.probs().axis_iter(Axis(0)))
            {
                acc += crate::label::cross_entropy(p, q)?;
            }
            Ok(acc)
        }
        LossSpec::Logit { targets } => {
            let logits = trace.logits();
            let mut acc = 0.0;
            for (row, &t) in logits.axis_iter(Axis(0)).zip(targets.iter()) {
                acc += f64::from(row[t as usize]);
            }
            Ok(acc)
        }
        LossSpec::CosineToReference { reference } => {
            let emb = trace.values[model.penultimate_boundary()].as_feat();
            let (cos, _) = cosine_rows_and_grad(emb, reference);
            Ok(cos.iter().map(|&c| f64::from(c)).sum())
        }
    }
}

/// `d/d logits` of `sum_s CE(p_s, softmax(z_s))`, which is `softmax(z) - p`.
pub fn d_logits_ce(targets: &LabelDistribution, logits: &Array2<f32>) -> Result<Array2<f32>> {
    let probs = softmax_batch(logits.view())?;
    Ok(probs.into_probs() - targets.probs())
}

/// `d/d logits` of `sum_s z_{s, t_s}`: one-hot rows at the targets.
pub fn d_logits_logit(targets: &[u32], class_count: usize) -> Result<Array2<f32>> {
    let mut d = Array2::<f32>::zeros((targets.len(), class_count));
    for (mut row, &t) in d.axis_iter_mut(Axis(0)).zip(targets.iter()) {
        if t as usize >= class_count {
            return Err(Error::ClassOutOfRange {
                index: t as usize,
                class_count,
            });
        }
        row[t as usize] = 1.0;
    }
    Ok(d)
}

/// Row-wise cosine between embeddings and references, plus the gradient of
/// `sum_s cos_s` w.r.t. the embeddings. Zero rows yield cosine 0 and zero
/// gradient.
pub fn cosine_rows_and_grad(emb: &Array2<f32>, reference: &Array2<f32>) -> (Vec<f32>, Array2<f32>) {
    let n = emb.nrows();
    let mut cos = Vec::with_capacity(n);
    let mut grad = Array2::<f32>::zeros(emb.raw_dim());
    for i in 0..n {
        let e = emb.row(i);
        let r = reference.row(i);
        let ne = norm2(&e);
        let nr = norm2(&r);
        if ne == 0.0 || nr == 0.0 {
            cos.push(0.0);
            continue;
        }
        let dot: f64 = e
            .iter()
            .zip(r.iter())
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let c = dot / (ne * nr);
        cos.push(c as f32);
        let mut g = grad.row_mut(i);
        for j in 0..e.len() {
            let term = f64::from(r[j]) / (ne * nr) - c * f64::from(e[j]) / (ne * ne);
            g[j] = term as f32;
        }
    }
    (cos, grad)
}

fn norm2(v: &ndarray::ArrayView1<f32>) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Mean cross-entropy training loss `CE(p, softmax(z))` and its logits
/// gradient scaled by `1/n`.
pub fn ce_training_loss(
    targets: &LabelDistribution,
    logits: &Array2<f32>,
) -> Result<(f64, Array2<f32>)> {
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("training batch"));
    }
    let probs = softmax_batch(logits.view())?;
    let mut acc = 0.0;
    for (p, q) in targets
        .probs()
        .axis_iter(Axis(0))
        .zip(probs.probs().axis_iter(Axis(0)))
    {
        acc += crate::label::cross_entropy(p, q)?;
    }
    let scale = 1.0 / n as f32;
    let d = (probs.into_probs() - targets.probs()).mapv(|v| v * scale);
    Ok((acc / n as f64, d))
}

/// One-hot rows for integer labels.
pub fn one_hot_rows(labels: &[u32], class_count: usize) -> Result<LabelDistribution> {
    let mut m = Array2::<f32>::zeros((labels.len(), class_count));
    for (mut row, &y) in m.axis_iter_mut(Axis(0)).zip(labels.iter()) {
        if y as usize >= class_count {
            return Err(Error::ClassOutOfRange {
                index: y as usize,
                class_count,
            });
        }
        row[y as usize] = 1.0;
    }
    LabelDistribution::new(m)
}

fn check_batch(
    model: &ClassifierModel,
    batch: usize,
    targets: usize,
    k: usize,
) -> Result<()> {
    if batch != targets || k != model.class_count() {
        return Err(Error::ShapeMismatch {
            context: "loss targets",
            expected: format!("{batch} targets over {} classes", model.class_count()),
            got: format!("{targets} targets over {k} classes"),
        });
    }
    Ok(())
}
