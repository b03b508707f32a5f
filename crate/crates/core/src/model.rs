//! Differentiable classifier models.
//!
//! A [`ClassifierModel`] is a sequential stack of layers with explicit
//! forward traces and hand-written backward passes, giving exact gradients
//! with respect to both inputs and parameters. Three small registered
//! architectures (`conv_a`, `conv_b`, `mlp`) stand in for a heterogeneous
//! surrogate/victim zoo.

use ndarray::{Array1, Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::Rng;

/// Registered architecture ids. `linear` (flatten plus a single dense head)
/// exists mainly for closed-form oracles; the other three emulate a
/// heterogeneous model zoo.
pub const ARCHITECTURES: &[&str] = &["conv_a", "conv_b", "mlp", "linear"];

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Valid (no padding) convolution, stride 1. Weight is `(oc, ic, kh, kw)`.
    Conv {
        weight: Array4<f32>,
        bias: Array1<f32>,
    },
    /// Fully connected layer. Weight is `(out, in)`.
    Dense {
        weight: Array2<f32>,
        bias: Array1<f32>,
    },
    Relu,
    /// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
    MaxPool2,
    Flatten,
}

/// Activation flowing between layers: image-shaped or flat features.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Im(Array4<f32>),
    Feat(Array2<f32>),
}

impl Value {
    pub fn as_im(&self) -> &Array4<f32> {
        match self {
            Value::Im(a) => a,
            Value::Feat(_) => panic!("expected image-shaped value"),
        }
    }

    pub fn as_feat(&self) -> &Array2<f32> {
        match self {
            Value::Feat(a) => a,
            Value::Im(_) => panic!("expected feature-shaped value"),
        }
    }
}

/// Recorded activations of one forward pass. `values[i]` is the input to
/// layer `i`; the last entry is the logits.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Value>,
}

impl Trace {
    pub fn logits(&self) -> &Array2<f32> {
        self.values.last().expect("trace is never empty").as_feat()
    }
}

/// Per-layer parameter gradients, aligned with the model's layer list.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub per_layer: Vec<Option<LayerGrad>>,
}

#[derive(Debug, Clone)]
pub enum LayerGrad {
    Conv {
        d_weight: Array4<f32>,
        d_bias: Array1<f32>,
    },
    Dense {
        d_weight: Array2<f32>,
        d_bias: Array1<f32>,
    },
}

impl Gradients {
    pub fn zeros_like(model: &ClassifierModel) -> Self {
        let per_layer = model
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { weight, bias } => Some(LayerGrad::Conv {
                    d_weight: Array4::zeros(weight.raw_dim()),
                    d_bias: Array1::zeros(bias.raw_dim()),
                }),
                Layer::Dense { weight, bias } => Some(LayerGrad::Dense {
                    d_weight: Array2::zeros(weight.raw_dim()),
                    d_bias: Array1::zeros(bias.raw_dim()),
                }),
                _ => None,
            })
            .collect();
        Gradients { per_layer }
    }
}

/// A differentiable classifier: registered architecture, class count, and
/// named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    architecture_id: String,
    class_count: usize,
    input_shape: (usize, usize, usize),
    layers: Vec<Layer>,
}

impl ClassifierModel {
    pub fn architecture_id(&self) -> &str {
        &self.architecture_id
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Boundary index of the penultimate activation: the input to the final
    /// dense layer.
    pub fn penultimate_boundary(&self) -> usize {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .expect("registered architectures end in a dense layer")
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.layers[self.penultimate_boundary()] {
            Layer::Dense { weight, .. } => weight.ncols(),
            _ => unreachable!(),
        }
    }

    /// Logits `(n, K)` for an image batch.
    pub fn logits(&self, x: &ImageBatch) -> Array2<f32> {
        self.logits_array(x.data())
    }

    pub fn logits_array(&self, x: &Array4<f32>) -> Array2<f32> {
        let mut v = Value::Im(x.clone());
        for layer in &self.layers {
            v = forward_layer(layer, &v);
        }
        match v {
            Value::Feat(f) => f,
            Value::Im(_) => panic!("model does not end in a dense layer"),
        }
    }

    /// Argmax class per sample; ties resolve to the lowest index.
    pub fn predict(&self, x: &ImageBatch) -> Vec<u32> {
        argmax_rows(&self.logits(x))
    }

    pub fn forward_trace(&self, x: &Array4<f32>) -> Trace {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(Value::Im(x.clone()));
        for layer in &self.layers {
            let next = forward_layer(layer, values.last().unwrap());
            values.push(next);
        }
        Trace { values }
    }

    /// Penultimate activations `(n, d_e)`.
    pub fn embedding(&self, x: &ImageBatch) -> Array2<f32> {
        let boundary = self.penultimate_boundary();
        let mut v = Value::Im(x.data().clone());
        for layer in &self.layers[..boundary] {
            v = forward_layer(layer, &v);
        }
        match v {
            Value::Feat(f) => f,
            Value::Im(_) => panic!("penultimate activation is not flat"),
        }
    }

    /// Backpropagate `d` from boundary index `boundary` (the input of layer
    /// `boundary`) down to the model input. Returns the input gradient and,
    /// when requested, parameter gradients for the traversed layers.
    pub fn backprop_from(
        &self,
        trace: &Trace,
        boundary: usize,
        d: Value,
        want_params: bool,
    ) -> (Array4<f32>, Option<Gradients>) {
        assert!(boundary <= self.layers.len());
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut d = d;
        for i in (0..boundary).rev() {
            let input = &trace.values[i];
            let slot = grads.as_mut().map(|g| &mut g.per_layer[i]);
            d = backward_layer(&self.layers[i], input, &d, slot);
        }
        match d {
            Value::Im(a) => (a, grads),
            Value::Feat(_) => panic!("model input is image-shaped"),
        }
    }

    /// Gradient of a scalar loss w.r.t. the input, given `d loss / d logits`.
    pub fn input_gradient_from_logits(&self, trace: &Trace, d_logits: Array2<f32>) -> Array4<f32> {
        self.backprop_from(trace, self.layers.len(), Value::Feat(d_logits), false)
            .0
    }

    /// Full backward pass from the logits: input gradient plus parameter
    /// gradients.
    pub fn backward(&self, trace: &Trace, d_logits: Array2<f32>) -> (Array4<f32>, Gradients) {
        let (dx, grads) = self.backprop_from(trace, self.layers.len(), Value::Feat(d_logits), true);
        (dx, grads.expect("requested gradients"))
    }

    /// Named parameter tensors in layer order.
    pub fn param_tensors(&self) -> Vec<(String, ParamTensor<'_>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { weight, bias } => {
                    out.push((format!("layer{i}.weight"), ParamTensor::T4(weight)));
                    out.push((format!("layer{i}.bias"), ParamTensor::T1(bias)));
                }
                Layer::Dense { weight, bias } => {
                    out.push((format!("layer{i}.weight"), ParamTensor::T2(weight)));
                    out.push((format!("layer{i}.bias"), ParamTensor::T1(bias)));
                }
                _ => {}
            }
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_tensors()
            .iter()
            .map(|(_, t)| match t {
                ParamTensor::T4(a) => a.len(),
                ParamTensor::T2(a) => a.len(),
                ParamTensor::T1(a) => a.len(),
            })
            .sum()
    }

    /// Euclidean distance between the flattened parameters of two models.
    pub fn param_l2_distance(&self, other: &ClassifierModel) -> f64 {
        let a = self.flat_params();
        let b = other.flat_params();
        assert_eq!(a.len(), b.len(), "models with different parameter counts");
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| {
                let d = f64::from(x - y);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.param_tensors() {
            match t {
                ParamTensor::T4(a) => out.extend(a.iter().copied()),
                ParamTensor::T2(a) => out.extend(a.iter().copied()),
                ParamTensor::T1(a) => out.extend(a.iter().copied()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ParamTensor<'a> {
    T4(&'a Array4<f32>),
    T2(&'a Array2<f32>),
    T1(&'a Array1<f32>),
}

pub fn argmax_rows(logits: &Array2<f32>) -> Vec<u32> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

/// Build a registered architecture with He-normal initialization.
pub fn build_model(
    architecture_id: &str,
    class_count: usize,
    input_shape: (usize, usize, usize),
    rng: &mut Rng,
) -> Result<ClassifierModel> {
    if class_count == 0 {
        return Err(Error::InvalidParameter {
            name: "class_count",
            reason: "must be at least 1".into(),
        });
    }
    let (c, h, w) = input_shape;
    let plan: Vec<LayerPlan> = match architecture_id {
        "conv_a" => vec![
            LayerPlan::Conv { out: 8, k: 3 },
            LayerPlan::Relu,
            LayerPlan::Pool,
            LayerPlan::Conv { out: 16, k: 3 },
            LayerPlan::Relu,
            LayerPlan::Flatten,
            LayerPlan::Dense { out: 0 }, // 0 marks the class head
        ],
        "conv_b" => vec![
            LayerPlan::Conv { out: 6, k: 5 },
            LayerPlan::Relu,
            LayerPlan::Pool,
            LayerPlan::Flatten,
            LayerPlan::Dense { out: 32 },
            LayerPlan::Relu,
            LayerPlan::Dense { out: 0 },
        ],
        "mlp" => vec![
            LayerPlan::Flatten,
            LayerPlan::Dense { out: 64 },
            LayerPlan::Relu,
            LayerPlan::Dense { out: 0 },
        ],
        "linear" => vec![LayerPlan::Flatten, LayerPlan::Dense { out: 0 }],
        other => return Err(Error::UnknownArchitecture(other.to_string())),
    };

    let mut layers = Vec::with_capacity(plan.len());
    let mut shape = Shape::Im { c, h, w };
    for step in plan {
        match step {
            LayerPlan::Conv { out, k } => {
                let (ic, ih, iw) = shape.expect_im("conv input")?;
                if ih < k || iw < k {
                    return Err(Error::InvalidParameter {
                        name: "input_shape",
                        reason: format!("{architecture_id} needs at least {k}x{k} inputs"),
                    });
                }
                let fan_in = ic * k * k;
                let std = (2.0 / fan_in as f64).sqrt();
                let weight = Array4::from_shape_fn((out, ic, k, k), |_| {
                    (rng.normal() * std) as f32
                });
                layers.push(Layer::Conv {
                    weight,
                    bias: Array1::zeros(out),
                });
                shape = Shape::Im {
                    c: out,
                    h: ih - k + 1,
                    w: iw - k + 1,
                };
            }
            LayerPlan::Relu => layers.push(Layer::Relu),
            LayerPlan::Pool => {
                let (ic, ih, iw) = shape.expect_im("pool input")?;
                if ih < 2 || iw < 2 {
                    return Err(Error::InvalidParameter {
                        name: "input_shape",
                        reason: "too small for 2x2 pooling".into(),
                    });
                }
                layers.push(Layer::MaxPool2);
                shape = Shape::Im {
                    c: ic,
                    h: ih / 2,
                    w: iw / 2,
                };
            }
            LayerPlan::Flatten => {
                let (ic, ih, iw) = shape.expect_im("flatten input")?;
                layers.push(Layer::Flatten);
                shape = Shape::Feat { d: ic * ih * iw };
            }
            LayerPlan::Dense { out } => {
                let d_in = shape.expect_feat("dense input")?;
                let d_out = if out == 0 { class_count } else { out };
                let std = (2.0 / d_in as f64).sqrt();
                let weight = Array2::from_shape_fn((d_out, d_in), |_| (rng.normal() * std) as f32);
                layers.push(Layer::Dense {
                    weight,
                    bias: Array1::zeros(d_out),
                });
                shape = Shape::Feat { d: d_out };
            }
        }
    }

    Ok(ClassifierModel {
        architecture_id: architecture_id.to_string(),
        class_count,
        input_shape,
        layers,
    })
}

enum LayerPlan {
    Conv { out: usize, k: usize },
    Dense { out: usize },
    Relu,
    Pool,
    Flatten,
}

enum Shape {
    Im { c: usize, h: usize, w: usize },
    Feat { d: usize },
}

impl Shape {
    fn expect_im(&self, context: &'static str) -> Result<(usize, usize, usize)> {
        match self {
            Shape::Im { c, h, w } => Ok((*c, *h, *w)),
            Shape::Feat { .. } => Err(Error::InvalidParameter {
                name: context,
                reason: "expected image-shaped activation".into(),
            }),
        }
    }

    fn expect_feat(&self, context: &'static str) -> Result<usize> {
        match self {
            Shape::Feat { d } => Ok(*d),
            Shape::Im { .. } => Err(Error::InvalidParameter {
                name: context,
                reason: "expected flat activation".into(),
            }),
        }
    }
}

fn forward_layer(layer: &Layer, input: &Value) -> Value {
    match layer {
        Layer::Conv { weight, bias } => Value::Im(conv_forward(input.as_im(), weight, bias)),
        Layer::Dense { weight, bias } => Value::Feat(dense_forward(input.as_feat(), weight, bias)),
        Layer::Relu => match input {
            Value::Im(a) => Value::Im(a.mapv(|v| v.max(0.0))),
            Value::Feat(a) => Value::Feat(a.mapv(|v| v.max(0.0))),
        },
        Layer::MaxPool2 => Value::Im(maxpool_forward(input.as_im())),
        Layer::Flatten => {
            let a = input.as_im();
            let n = a.shape()[0];
            let d = a.len() / n;
            Value::Feat(
                a.to_owned()
                    .into_shape_with_order((n, d))
                    .expect("flatten reshape"),
            )
        }
    }
}

fn backward_layer(
    layer: &Layer,
    input: &Value,
    d_out: &Value,
    grad_slot: Option<&mut Option<LayerGrad>>,
) -> Value {
    match layer {
        Layer::Conv { weight, .. } => {
            let (d_in, dw, db) = conv_backward(input.as_im(), weight, d_out.as_im());
            if let Some(slot) = grad_slot {
                *slot = Some(LayerGrad::Conv {
                    d_weight: dw,
                    d_bias: db,
                });
            }
            Value::Im(d_in)
        }
        Layer::Dense { weight, .. } => {
            let x = input.as_feat();
            let dy = d_out.as_feat();
            let d_in = dy.dot(weight);
            if let Some(slot) = grad_slot {
                *slot = Some(LayerGrad::Dense {
                    d_weight: dy.t().dot(x),
                    d_bias: dy.sum_axis(Axis(0)),
                });
            }
            Value::Feat(d_in)
        }
        Layer::Relu => match (input, d_out) {
            (Value::Im(x), Value::Im(d)) => {
                let mut out = d.clone();
                out.zip_mut_with(x, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                Value::Im(out)
            }
            (Value::Feat(x), Value::Feat(d)) => {
                let mut out = d.clone();
                out.zip_mut_with(x, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                Value::Feat(out)
            }
            _ => panic!("relu input/gradient shape mismatch"),
        },
        Layer::MaxPool2 => Value::Im(maxpool_backward(input.as_im(), d_out.as_im())),
        Layer::Flatten => {
            let x = input.as_im();
            Value::Im(
                d_out
                    .as_feat()
                    .to_owned()
                    .into_shape_with_order(x.raw_dim())
                    .expect("unflatten reshape"),
            )
        }
    }
}

fn dense_forward(x: &Array2<f32>, weight: &Array2<f32>, bias: &Array1<f32>) -> Array2<f32> {
    let mut out = x.dot(&weight.t());
    out += bias;
    out
}

fn conv_forward(x: &Array4<f32>, weight: &Array4<f32>, bias: &Array1<f32>) -> Array4<f32> {
    let (n, ic, ih, iw) = dims4(x);
    let (oc, wic, kh, kw) = dims4(weight);
    assert_eq!(ic, wic, "conv channel mismatch");
    let oh = ih - kh + 1;
    let ow = iw - kw + 1;
    let mut out = Array4::<f32>::zeros((n, oc, oh, ow));
    let xs = x.as_slice().expect("standard layout");
    let ws = weight.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for b in 0..n {
        for o in 0..oc {
            let b0 = bias[o];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for i in 0..ic {
                        for ky in 0..kh {
                            let xrow = ((b * ic + i) * ih + (oy + ky)) * iw + ox;
                            let wrow = ((o * ic + i) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc += xs[xrow + kx] * ws[wrow + kx];
                            }
                        }
                    }
                    os[((b * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &Array4<f32>,
    weight: &Array4<f32>,
    d_out: &Array4<f32>,
) -> (Array4<f32>, Array4<f32>, Array1<f32>) {
    let (n, ic, ih, iw) = dims4(x);
    let (oc, _, kh, kw) = dims4(weight);
    let (_, _, oh, ow) = dims4(d_out);
    let mut d_in = Array4::<f32>::zeros((n, ic, ih, iw));
    let mut d_w = Array4::<f32>::zeros(weight.raw_dim());
    let mut d_b = Array1::<f32>::zeros(oc);
    let xs = x.as_slice().expect("standard layout");
    let ws = weight.as_slice().expect("standard layout");
    let gs = d_out.as_slice().expect("standard layout");
    let dis = d_in.as_slice_mut().expect("standard layout");
    let dws = d_w.as_slice_mut().expect("standard layout");
    for b in 0..n {
        for o in 0..oc {
            let mut db_acc = 0.0f32;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gs[((b * oc + o) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    db_acc += g;
                    for i in 0..ic {
                        for ky in 0..kh {
                            let xrow = ((b * ic + i) * ih + (oy + ky)) * iw + ox;
                            let wrow = ((o * ic + i) * kh + ky) * kw;
                            for kx in 0..kw {
                                dws[wrow + kx] += g * xs[xrow + kx];
                                dis[xrow + kx] += g * ws[wrow + kx];
                            }
                        }
                    }
                }
            }
            d_b[o] += db_acc;
        }
    }
    (d_in, d_w, d_b)
}

fn maxpool_forward(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, ih, iw) = dims4(x);
    let oh = ih / 2;
    let ow = iw / 2;
    let mut out = Array4::<f32>::zeros((n, c, oh, ow));
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
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

fn maxpool_backward(x: &Array4<f32>, d_out: &Array4<f32>) -> Array4<f32> {
    let (n, c, ih, iw) = dims4(x);
    let (_, _, oh, ow) = dims4(d_out);
    let mut d_in = Array4::<f32>::zeros((n, c, ih, iw));
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Route to the first maximum in scan order.
                    let mut best = (0usize, 0usize);
                    let mut best_v = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x[[b, ch, 2 * oy + dy, 2 * ox + dx]];
                            if v > best_v {
                                best_v = v;
                                best = (dy, dx);
                            }
                        }
                    }
                    d_in[[b, ch, 2 * oy + best.0, 2 * ox + best.1]] += d_out[[b, ch, oy, ox]];
                }
            }
        }
    }
    d_in
}

pub(crate) fn dims4(a: &Array4<f32>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2], s[3])
}
