//! Adversarial-example optimizers: FGSM, MI-FGSM, M-DI2-FGSM, the
//! logit-targeted variant, and ensemble attacks.
//!
//! All iterative optimizers share one update loop:
//!
//! ```text
//! v       = ascent gradient of the objective at (a transform of) x_i
//! g       = mu * g + v / |v|_1          (per sample; |v|_1 = 0 drops the term)
//! x_{i+1} = Clip{ x_i + beta * sign(g) }
//! ```
//!
//! with `sign(0) = 0` and `Clip` the exact projection onto the
//! epsilon-ball around the original image intersected with `[0,1]`.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::label::{softmax_batch, LabelDistribution};
use crate::loss::{cosine_rows_and_grad, d_logits_ce, d_logits_logit, one_hot_rows};
use crate::model::{ClassifierModel, Value};
use crate::rng::Rng;

/// Attack hyper-parameters. Budgets are on the `[0,1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epsilon: f32,
    pub beta: f32,
    pub mu: f32,
    pub iterations: usize,
    pub p_t: f64,
    pub diversity: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 16.0 / 255.0,
            beta: 2.0 / 255.0,
            mu: 1.0,
            iterations: 10,
            p_t: 0.7,
            diversity: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", format!("{} outside [0,1]", self.epsilon));
        }
        if self.beta <= 0.0 {
            return bad("beta", format!("{} must be positive", self.beta));
        }
        if self.mu < 0.0 {
            return bad("mu", format!("{} must be non-negative", self.mu));
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_t) {
            return bad("p_t", format!("{} outside [0,1]", self.p_t));
        }
        Ok(())
    }
}

/// What the attacker maximizes. Targeted cross-entropy descends the loss
/// toward the target, which is ascent on its negation; the remaining
/// objectives are plain ascent.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Increase `CE(e_y, softmax(f(x)))` away from the true labels.
    UntargetedCe { labels: Vec<u32> },
    /// Decrease `CE(e_t, softmax(f(x)))` toward the target labels.
    TargetedCe { targets: Vec<u32> },
    /// Increase the raw logit of the target labels.
    TargetedLogit { targets: Vec<u32> },
    /// Decrease cosine similarity between embeddings and references.
    EmbeddingDodge { reference: Array2<f32> },
    /// Increase cosine similarity between embeddings and references.
    EmbeddingImpersonate { reference: Array2<f32> },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::UntargetedCe { .. } => "untargeted_ce",
            Objective::TargetedCe { .. } => "targeted_ce",
            Objective::TargetedLogit { .. } => "targeted_logit",
            Objective::EmbeddingDodge { .. } => "embedding_dodge",
            Objective::EmbeddingImpersonate { .. } => "embedding_impersonate",
        }
    }
}

/// A model or ensemble the optimizer can query for ascent gradients.
pub trait AttackSurface {
    fn class_count(&self) -> usize;
    /// Gradient of the objective's ascent direction w.r.t. the input pixels.
    fn ascent_gradient(&self, x: &Array4<f32>, objective: &Objective) -> Result<Array4<f32>>;
}

impl AttackSurface for ClassifierModel {
    fn class_count(&self) -> usize {
        ClassifierModel::class_count(self)
    }

    fn ascent_gradient(&self, x: &Array4<f32>, objective: &Objective) -> Result<Array4<f32>> {
        let trace = self.forward_trace(x);
        match objective {
            Objective::UntargetedCe { labels } => {
                let targets = one_hot_rows(labels, self.class_count())?;
                let d = d_logits_ce(&targets, trace.logits())?;
                Ok(self.input_gradient_from_logits(&trace, d))
            }
            Objective::TargetedCe { targets } => {
                let targets = one_hot_rows(targets, self.class_count())?;
                let d = d_logits_ce(&targets, trace.logits())?.mapv(|v| -v);
                Ok(self.input_gradient_from_logits(&trace, d))
            }
            Objective::TargetedLogit { targets } => {
                let d = d_logits_logit(targets, self.class_count())?;
                Ok(self.input_gradient_from_logits(&trace, d))
            }
            Objective::EmbeddingDodge { reference }
            | Objective::EmbeddingImpersonate { reference } => {
                let boundary = self.penultimate_boundary();
                let emb = trace.values[boundary].as_feat();
                if emb.raw_dim() != reference.raw_dim() {
                    return Err(Error::ShapeMismatch {
                        context: "embedding objective reference",
                        expected: format!("{:?}", emb.shape()),
                        got: format!("{:?}", reference.shape()),
                    });
                }
                let (_, mut d_emb) = cosine_rows_and_grad(emb, reference);
                if matches!(objective, Objective::EmbeddingDodge { .. }) {
                    d_emb.mapv_inplace(|v| -v);
                }
                Ok(self.backprop_from(&trace, boundary, Value::Feat(d_emb), false).0)
            }
        }
    }
}

/// How ensemble members are fused before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Equal-weight average of member logits (default).
    Logits,
    /// Equal-weight average of member probabilities; cross-entropy objectives
    /// differentiate through the averaged distribution.
    Probabilities,
}

/// Equal-weight ensemble over shared-class models.
pub struct Ensemble<'a> {
    members: Vec<&'a ClassifierModel>,
    fusion: Fusion,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a ClassifierModel>, fusion: Fusion) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyInput("ensemble members"));
        }
        let k = members[0].class_count();
        if members.iter().any(|m| m.class_count() != k) {
            return Err(Error::ShapeMismatch {
                context: "ensemble class counts",
                expected: format!("{k}"),
                got: "mixed".into(),
            });
        }
        Ok(Ensemble { members, fusion })
    }

    fn mean_logits(&self, traces: &[crate::model::Trace]) -> Array2<f32> {
        let scale = 1.0 / self.members.len() as f32;
        let mut acc = traces[0].logits().clone();
        for t in &traces[1..] {
            acc += t.logits();
        }
        acc.mapv_inplace(|v| v * scale);
        acc
    }
}

impl AttackSurface for Ensemble<'_> {
    fn class_count(&self) -> usize {
        self.members[0].class_count()
    }

    fn ascent_gradient(&self, x: &Array4<f32>, objective: &Objective) -> Result<Array4<f32>> {
        if matches!(
            objective,
            Objective::EmbeddingDodge { .. } | Objective::EmbeddingImpersonate { .. }
        ) {
            return Err(Error::Unsupported(
                "embedding objectives are single-surrogate attacks".into(),
            ));
        }
        let traces: Vec<_> = self.members.iter().map(|m| m.forward_trace(x)).collect();
        let scale = 1.0 / self.members.len() as f32;

        let member_d_logits: Vec<Array2<f32>> = match (self.fusion, objective) {
            (Fusion::Logits, _) => {
                let fused = self.mean_logits(&traces);
                let d_fused = fused_d_logits(objective, &fused, self.class_count())?;
                vec![d_fused.mapv(|v| v * scale); self.members.len()]
            }
            (Fusion::Probabilities, Objective::UntargetedCe { labels })
            | (Fusion::Probabilities, Objective::TargetedCe { targets: labels }) => {
                let probs: Vec<LabelDistribution> = traces
                    .iter()
                    .map(|t| softmax_batch(t.logits().view()))
                    .collect::<Result<_>>()?;
                let mut mean_p = probs[0].probs().clone();
                for p in &probs[1..] {
                    mean_p += p.probs();
                }
                mean_p.mapv_inplace(|v| v * scale);
                // d/dp of CE(e_y, p) is -e_y / p_y; ascent for untargeted,
                // descent for targeted.
                let sign = if matches!(objective, Objective::UntargetedCe { .. }) {
                    1.0f32
                } else {
                    -1.0
                };
                let mut d_mean = Array2::<f32>::zeros(mean_p.raw_dim());
                for (row, &y) in labels.iter().enumerate() {
                    let p = mean_p[[row, y as usize]].max(crate::label::CE_FLOOR as f32);
                    d_mean[[row, y as usize]] = -sign / p;
                }
                // Pull back through each member's softmax jacobian.
                probs
                    .iter()
                    .map(|p| softmax_vjp(p.probs(), &d_mean).mapv(|v| v * scale))
                    .collect()
            }
            (Fusion::Probabilities, Objective::TargetedLogit { .. }) => {
                // The logit objective has no probability form; fuse logits.
                let fused = self.mean_logits(&traces);
                let d_fused = fused_d_logits(objective, &fused, self.class_count())?;
                vec![d_fused.mapv(|v| v * scale); self.members.len()]
            }
            _ => unreachable!("embedding objectives rejected above"),
        };

        let mut acc: Option<Array4<f32>> = None;
        for (member, (trace, d)) in self
            .members
            .iter()
            .zip(traces.iter().zip(member_d_logits.into_iter()))
        {
            let g = member.input_gradient_from_logits(trace, d);
            acc = Some(match acc {
                None => g,
                Some(mut a) => {
                    a += &g;
                    a
                }
            });
        }
        Ok(acc.expect("non-empty ensemble"))
    }
}

fn fused_d_logits(
    objective: &Objective,
    fused_logits: &Array2<f32>,
    class_count: usize,
) -> Result<Array2<f32>> {
    match objective {
        Objective::UntargetedCe { labels } => {
            let t = one_hot_rows(labels, class_count)?;
            d_logits_ce(&t, fused_logits)
        }
        Objective::TargetedCe { targets } => {
            let t = one_hot_rows(targets, class_count)?;
            Ok(d_logits_ce(&t, fused_logits)?.mapv(|v| -v))
        }
        Objective::TargetedLogit { targets } => d_logits_logit(targets, class_count),
        _ => unreachable!(),
    }
}

/// Vector-jacobian product through a softmax given its output probabilities:
/// `dz = p (*) (g - <g, p>)`.
fn softmax_vjp(p: &Array2<f32>, g: &Array2<f32>) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros(p.raw_dim());
    for ((mut o, pr), gr) in out
        .axis_iter_mut(Axis(0))
        .zip(p.axis_iter(Axis(0)))
        .zip(g.axis_iter(Axis(0)))
    {
        let dot: f32 = pr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
        for i in 0..o.len() {
            o[i] = pr[i] * (gr[i] - dot);
        }
    }
    out
}

/// Attack output: the adversarial batch, the L1 gradient-norm trace per
/// iteration and sample, and the number of iterations executed.
#[derive(Debug, Clone)]
pub struct AdvResult {
    pub adversarial: ImageBatch,
    pub grad_norms: Vec<Vec<f32>>,
    pub iterations: usize,
}

/// `sign` with `sign(0) = 0`, so unaffected pixels stay untouched.
pub fn sign0(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elementwise projection onto the epsilon-ball of `x_orig` intersected with
/// the pixel range: `clamp(x_adv, max(x - eps, 0), min(x + eps, 1))`.
pub fn clip_project(x_adv: &ImageBatch, x_orig: &ImageBatch, epsilon: f32) -> Result<ImageBatch> {
    if x_adv.data().raw_dim() != x_orig.data().raw_dim() {
        return Err(Error::ShapeMismatch {
            context: "clip_project",
            expected: format!("{:?}", x_orig.data().shape()),
            got: format!("{:?}", x_adv.data().shape()),
        });
    }
    let projected = clip_project_arrays(x_adv.data(), x_orig.data(), epsilon);
    ImageBatch::new(projected, x_adv.ids().to_vec())
}

fn clip_project_arrays(x_adv: &Array4<f32>, x_orig: &Array4<f32>, epsilon: f32) -> Array4<f32> {
    let eps64 = f64::from(epsilon);
    let mut out = x_adv.clone();
    out.zip_mut_with(x_orig, |a, &o| {
        // `o + epsilon` can round upward past the true ball; pull the bound
        // back one ulp so the L-infinity budget holds exactly.
        let mut hi = o + epsilon;
        if f64::from(hi) - f64::from(o) > eps64 {
            hi = hi.next_down();
        }
        let mut lo = o - epsilon;
        if f64::from(o) - f64::from(lo) > eps64 {
            lo = lo.next_up();
        }
        *a = a.clamp(lo.max(0.0), hi.min(1.0));
    });
    out
}

/// Shared iterative-sign loop. `rng` is only consumed when `cfg.diversity`
/// is set; given a fixed `Rng` the attack is deterministic.
pub fn run_attack(
    surface: &dyn AttackSurface,
    x: &ImageBatch,
    objective: &Objective,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AdvResult> {
    cfg.validate()?;
    let x0 = x.data();
    let (n, _, h, w) = crate::model::dims4(x0);
    let mut xi = x0.clone();
    let mut g = Array4::<f32>::zeros(x0.raw_dim());
    let mut grad_norms = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let v = if cfg.diversity {
            let plan = sample_diversity_plan(n, h, w, cfg.p_t, rng);
            let xt = apply_diversity(&xi, &plan);
            let vt = surface.ascent_gradient(&xt, objective)?;
            diversity_backward(&vt, &plan, h, w)
        } else {
            surface.ascent_gradient(&xi, objective)?
        };

        let mut norms = Vec::with_capacity(n);
        for s in 0..n {
            let vs = v.index_axis(Axis(0), s);
            let n1: f32 = vs.iter().map(|&a| a.abs()).sum();
            norms.push(n1);
            let mut gs = g.index_axis_mut(Axis(0), s);
            if n1 > 0.0 {
                let inv = 1.0 / n1;
                gs.zip_mut_with(&vs, |gv, &vv| *gv = cfg.mu * *gv + vv * inv);
            } else {
                gs.mapv_inplace(|gv| cfg.mu * gv);
            }
        }
        grad_norms.push(norms);

        let mut stepped = xi;
        stepped.zip_mut_with(&g, |p, &gv| *p += cfg.beta * sign0(gv));
        xi = clip_project_arrays(&stepped, x0, cfg.epsilon);
    }

    Ok(AdvResult {
        adversarial: ImageBatch::new(xi, x.ids().to_vec())?,
        grad_norms,
        iterations: cfg.iterations,
    })
}

/// Single-step fast gradient sign attack on the true-label cross-entropy.
pub fn fgsm(
    model: &ClassifierModel,
    x: &ImageBatch,
    labels: &[u32],
    epsilon: f32,
) -> Result<AdvResult> {
    let cfg = AttackConfig {
        epsilon,
        beta: epsilon.max(f32::MIN_POSITIVE),
        mu: 0.0,
        iterations: 1,
        p_t: 0.0,
        diversity: false,
    };
    let objective = Objective::UntargetedCe {
        labels: labels.to_vec(),
    };
    run_attack(model, x, &objective, &cfg, &mut Rng::new(0, "fgsm"))
}

/// Momentum iterative FGSM. Ignores `cfg.diversity`.
pub fn mi_fgsm(
    surface: &dyn AttackSurface,
    x: &ImageBatch,
    objective: &Objective,
    cfg: &AttackConfig,
) -> Result<AdvResult> {
    let cfg = AttackConfig {
        diversity: false,
        ..*cfg
    };
    run_attack(surface, x, objective, &cfg, &mut Rng::new(0, "mi-fgsm"))
}

/// Momentum diverse-inputs iterative FGSM: MI-FGSM with each gradient taken
/// through a random resize-and-pad transform applied with probability `p_t`.
pub fn mdi2_fgsm(
    surface: &dyn AttackSurface,
    x: &ImageBatch,
    objective: &Objective,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AdvResult> {
    let cfg = AttackConfig {
        diversity: true,
        ..*cfg
    };
    run_attack(surface, x, objective, &cfg, rng)
}

/// The logit-targeted loss `f(x)_{y_t}` and its input gradient.
pub fn targeted_logit_loss(
    model: &ClassifierModel,
    x: &ImageBatch,
    targets: &[u32],
) -> Result<(f64, Array4<f32>)> {
    let spec = crate::loss::LossSpec::Logit {
        targets: targets.to_vec(),
    };
    let value = crate::loss::loss_value(model, x.data(), &spec)?;
    let grad = crate::loss::input_gradient(model, x, &spec)?;
    Ok((value, grad))
}

/// Attack an equal-weight ensemble with one shared perturbation trajectory.
pub fn ensemble_attack(
    members: Vec<&ClassifierModel>,
    x: &ImageBatch,
    objective: &Objective,
    cfg: &AttackConfig,
    fusion: Fusion,
    rng: &mut Rng,
) -> Result<AdvResult> {
    let ensemble = Ensemble::new(members, fusion)?;
    run_attack(&ensemble, x, objective, cfg, rng)
}

/// One sample's diversity transform: nearest-neighbor resize to
/// `(s_h, s_w)` and zero-pad back at `(off_y, off_x)`.
#[derive(Debug, Clone, Copy)]
struct DivSample {
    applied: bool,
    s_h: usize,
    s_w: usize,
    off_y: usize,
    off_x: usize,
}

fn sample_diversity_plan(
    n: usize,
    h: usize,
    w: usize,
    p_t: f64,
    rng: &mut Rng,
) -> Vec<DivSample> {
    let min_h = (3 * h).div_ceil(4);
    let min_w = (3 * w).div_ceil(4);
    (0..n)
        .map(|_| {
            if rng.bernoulli(p_t) {
                let s_h = rng.range_inclusive(min_h, h);
                let s_w = rng.range_inclusive(min_w, w);
                DivSample {
                    applied: true,
                    s_h,
                    s_w,
                    off_y: rng.range_inclusive(0, h - s_h),
                    off_x: rng.range_inclusive(0, w - s_w),
                }
            } else {
                DivSample {
                    applied: false,
                    s_h: h,
                    s_w: w,
                    off_y: 0,
                    off_x: 0,
                }
            }
        })
        .collect()
}

fn apply_diversity(x: &Array4<f32>, plan: &[DivSample]) -> Array4<f32> {
    let (n, c, h, w) = crate::model::dims4(x);
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for (s, d) in plan.iter().enumerate() {
        if !d.applied {
            out.index_axis_mut(Axis(0), s).assign(&x.index_axis(Axis(0), s));
            continue;
        }
        for ch in 0..c {
            for y in 0..d.s_h {
                let sy = y * h / d.s_h;
                for xx in 0..d.s_w {
                    let sx = xx * w / d.s_w;
                    out[[s, ch, d.off_y + y, d.off_x + xx]] = x[[s, ch, sy, sx]];
                }
            }
        }
    }
    out
}

/// Transpose of the diversity transform: route each transformed pixel's
/// gradient back to its nearest-neighbor source.
fn diversity_backward(d_out: &Array4<f32>, plan: &[DivSample], h: usize, w: usize) -> Array4<f32> {
    let (n, c, _, _) = crate::model::dims4(d_out);
    let mut d_in = Array4::<f32>::zeros((n, c, h, w));
    for (s, d) in plan.iter().enumerate() {
        if !d.applied {
            d_in.index_axis_mut(Axis(0), s)
                .assign(&d_out.index_axis(Axis(0), s));
            continue;
        }
        for ch in 0..c {
            for y in 0..d.s_h {
                let sy = y * h / d.s_h;
                for xx in 0..d.s_w {
                    let sx = xx * w / d.s_w;
                    d_in[[s, ch, sy, sx]] += d_out[[s, ch, d.off_y + y, d.off_x + xx]];
                }
            }
        }
    }
    d_in
}

/// Random resize-and-pad transform applied per sample with probability `p_t`.
pub fn input_diversity(x: &ImageBatch, p_t: f64, rng: &mut Rng) -> Result<ImageBatch> {
    if !(0.0..=1.0).contains(&p_t) {
        return Err(Error::InvalidParameter {
            name: "p_t",
            reason: format!("{p_t} outside [0,1]"),
        });
    }
    let (n, _, h, w) = crate::model::dims4(x.data());
    let plan = sample_diversity_plan(n, h, w, p_t, rng);
    ImageBatch::new(apply_diversity(x.data(), &plan), x.ids().to_vec())
}
