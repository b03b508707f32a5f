//! Slow f64 reference implementations for verification.
//!
//! This module recomputes forward passes and losses in double precision with
//! deliberately plain code, independent of the f32 production path. It backs
//! the central-finite-difference gradient checks and must stay free of any
//! calls into [`crate::model`]'s forward/backward internals.

use ndarray::{Array1, Array2, Array4, Axis};

use crate::label::CE_FLOOR;
use crate::loss::LossSpec;
use crate::model::{ClassifierModel, Layer, ParamTensor};

#[derive(Debug, Clone)]
enum RefLayer {
    Conv { w: Array4<f64>, b: Array1<f64> },
    Dense { w: Array2<f64>, b: Array1<f64> },
    Relu,
    MaxPool2,
    Flatten,
}

#[derive(Debug, Clone)]
enum RefValue {
    Im(Array4<f64>),
    Feat(Array2<f64>),
}

/// A double-precision copy of a classifier's parameters.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    layers: Vec<RefLayer>,
    penultimate: usize,
}

impl ReferenceModel {
    pub fn from_model(model: &ClassifierModel) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Conv { weight, bias } => RefLayer::Conv {
                    w: weight.mapv(f64::from),
                    b: bias.mapv(f64::from),
                },
                Layer::Dense { weight, bias } => RefLayer::Dense {
                    w: weight.mapv(f64::from),
                    b: bias.mapv(f64::from),
                },
                Layer::Relu => RefLayer::Relu,
                Layer::MaxPool2 => RefLayer::MaxPool2,
                Layer::Flatten => RefLayer::Flatten,
            })
            .collect();
        ReferenceModel {
            layers,
            penultimate: model.penultimate_boundary(),
        }
    }

    pub fn logits(&self, x: &Array4<f64>) -> Array2<f64> {
        match self.forward_to(x, self.layers.len()) {
            RefValue::Feat(f) => f,
            RefValue::Im(_) => panic!("model does not end flat"),
        }
    }

    fn embedding(&self, x: &Array4<f64>) -> Array2<f64> {
        match self.forward_to(x, self.penultimate) {
            RefValue::Feat(f) => f,
            RefValue::Im(_) => panic!("penultimate activation is not flat"),
        }
    }

    fn forward_to(&self, x: &Array4<f64>, upto: usize) -> RefValue {
        let mut v = RefValue::Im(x.clone());
        for layer in &self.layers[..upto] {
            v = match (layer, v) {
                (RefLayer::Conv { w, b }, RefValue::Im(a)) => RefValue::Im(ref_conv(&a, w, b)),
                (RefLayer::Dense { w, b }, RefValue::Feat(a)) => {
                    let mut out = a.dot(&w.t());
                    out += b;
                    RefValue::Feat(out)
                }
                (RefLayer::Relu, RefValue::Im(a)) => RefValue::Im(a.mapv(|z| z.max(0.0))),
                (RefLayer::Relu, RefValue::Feat(a)) => RefValue::Feat(a.mapv(|z| z.max(0.0))),
                (RefLayer::MaxPool2, RefValue::Im(a)) => RefValue::Im(ref_pool(&a)),
                (RefLayer::Flatten, RefValue::Im(a)) => {
                    let n = a.shape()[0];
                    let d = a.len() / n;
                    RefValue::Feat(a.into_shape_with_order((n, d)).unwrap())
                }
                _ => panic!("layer/value kind mismatch"),
            };
        }
        v
    }

    /// Loss with the same summed-over-batch semantics as
    /// [`crate::loss::loss_value`], computed in f64 end to end.
    pub fn loss(&self, x: &Array4<f64>, spec: &LossSpec) -> f64 {
        match spec {
            LossSpec::CrossEntropy { targets } => {
                let logits = self.logits(x);
                let mut acc = 0.0;
                for (z, p) in logits
                    .axis_iter(Axis(0))
                    .zip(targets.probs().axis_iter(Axis(0)))
                {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = z.iter().map(|&v| (v - max).exp()).sum();
                    for (&zi, &pi) in z.iter().zip(p.iter()) {
                        if pi == 0.0 {
                            continue;
                        }
                        let qi = ((zi - max).exp() / denom).max(CE_FLOOR);
                        acc -= f64::from(pi) * qi.ln();
                    }
                }
                acc
            }
            LossSpec::Logit { targets } => {
                let logits = self.logits(x);
                logits
                    .axis_iter(Axis(0))
                    .zip(targets.iter())
                    .map(|(row, &t)| row[t as usize])
                    .sum()
            }
            LossSpec::CosineToReference { reference } => {
                let emb = self.embedding(x);
                let mut acc = 0.0;
                for (e, r) in emb.axis_iter(Axis(0)).zip(reference.axis_iter(Axis(0))) {
                    let ne = e.dot(&e).sqrt();
                    let nr: f64 = r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                    if ne == 0.0 || nr == 0.0 {
                        continue;
                    }
                    let dot: f64 = e.iter().zip(r.iter()).map(|(&a, &b)| a * f64::from(b)).sum();
                    acc += dot / (ne * nr);
                }
                acc
            }
        }
    }

    /// Flat mutable view of one named parameter tensor, for bump-and-reevaluate
    /// finite differences.
    pub fn param_mut(&mut self, name: &str) -> &mut [f64] {
        let (layer_idx, field) = parse_param_name(name);
        match (&mut self.layers[layer_idx], field) {
            (RefLayer::Conv { w, .. }, "weight") => w.as_slice_mut().unwrap(),
            (RefLayer::Conv { b, .. }, "bias") => b.as_slice_mut().unwrap(),
            (RefLayer::Dense { w, .. }, "weight") => w.as_slice_mut().unwrap(),
            (RefLayer::Dense { b, .. }, "bias") => b.as_slice_mut().unwrap(),
            _ => panic!("parameter {name} not found"),
        }
    }
}

fn parse_param_name(name: &str) -> (usize, &str) {
    let (layer, field) = name.split_once('.').expect("name like layerN.weight");
    let idx: usize = layer
        .strip_prefix("layer")
        .and_then(|s| s.parse().ok())
        .expect("name like layerN.weight");
    (idx, field)
}

fn ref_conv(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
    let (n, ic, ih, iw) = dims(x);
    let (oc, _, kh, kw) = dims(w);
    let oh = ih - kh + 1;
    let ow = iw - kw + 1;
    let mut out = Array4::<f64>::zeros((n, oc, oh, ow));
    for bi in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for i in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc += x[[bi, i, oy + ky, ox + kx]] * w[[o, i, ky, kx]];
                            }
                        }
                    }
                    out[[bi, o, oy, ox]] = acc;
                }
            }
        }
    }
    out
}

fn ref_pool(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, ih, iw) = dims(x);
    let (oh, ow) = (ih / 2, iw / 2);
    let mut out = Array4::<f64>::zeros((n, c, oh, ow));
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x[[b, ch, 2 * oy + dy, 2 * ox + dx]]);
                        }
                    }
                    out[[b, ch, oy, ox]] = m;
                }
            }
        }
    }
    out
}

fn dims(a: &Array4<f64>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}

/// Central finite difference of the reference loss along one input pixel.
pub fn central_diff_input(
    reference: &ReferenceModel,
    x: &Array4<f64>,
    spec: &LossSpec,
    coord: (usize, usize, usize, usize),
    step: f64,
) -> f64 {
    let mut hi = x.clone();
    let mut lo = x.clone();
    hi[coord] += step;
    lo[coord] -= step;
    (reference.loss(&hi, spec) - reference.loss(&lo, spec)) / (2.0 * step)
}

/// Central finite difference of the reference loss along one parameter
/// coordinate (flat index into the named tensor).
pub fn central_diff_param(
    reference: &ReferenceModel,
    x: &Array4<f64>,
    spec: &LossSpec,
    name: &str,
    flat_index: usize,
    step: f64,
) -> f64 {
    let mut hi = reference.clone();
    hi.param_mut(name)[flat_index] += step;
    let mut lo = reference.clone();
    lo.param_mut(name)[flat_index] -= step;
    (hi.loss(x, spec) - lo.loss(x, spec)) / (2.0 * step)
}

/// Flat copy of a named f32 parameter gradient or tensor for comparisons.
pub fn flat_tensor(t: &ParamTensor<'_>) -> Vec<f32> {
    match t {
        ParamTensor::T4(a) => a.iter().copied().collect(),
        ParamTensor::T2(a) => a.iter().copied().collect(),
        ParamTensor::T1(a) => a.iter().copied().collect(),
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::rng::Rng;

    #[test]
    fn reference_logits_match_f32_forward_closely() {
        let mut rng = Rng::new(5, "refcheck");
        let model = build_model("conv_a", 6, (1, 12, 12), &mut rng).unwrap();
        let x32 = Array4::from_shape_fn((2, 1, 12, 12), |_| rng.next_f32());
        let x64 = x32.mapv(f64::from);
        let reference = ReferenceModel::from_model(&model);
        let a = model.logits_array(&x32);
        let b = reference.logits(&x64);
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((f64::from(*p) - q).abs() < 1e-4, "{p} vs {q}");
        }
    }
}
