//! Label-construction strategies: one-hot, label smoothing, dark knowledge,
//! and the shuffled/reversed dark-knowledge controls.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::label::{softmax_batch_with_temperature, LabelDistribution};
use crate::model::ClassifierModel;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStrategyKind {
    OneHot,
    Smooth,
    Dark,
    DarkShuffled,
    DarkReversed,
}

impl LabelStrategyKind {
    /// Strategies that need a teacher model.
    pub fn needs_teacher(self) -> bool {
        matches!(
            self,
            LabelStrategyKind::Dark | LabelStrategyKind::DarkShuffled | LabelStrategyKind::DarkReversed
        )
    }
}

/// Labeling configuration; the teacher model itself is passed at call sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelStrategy {
    pub kind: LabelStrategyKind,
    /// Smoothing mass moved off the true class (`smooth` only).
    pub gamma: f32,
    /// Softmax temperature for dark labels.
    pub temperature: f32,
}

impl Default for LabelStrategy {
    fn default() -> Self {
        LabelStrategy {
            kind: LabelStrategyKind::OneHot,
            gamma: 0.1,
            temperature: 1.0,
        }
    }
}

impl LabelStrategy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("{} outside [0,1)", self.gamma),
            });
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "temperature",
                reason: format!("{} must be positive", self.temperature),
            });
        }
        Ok(())
    }
}

/// One-hot vector with unit mass at `y`.
pub fn one_hot(y: usize, k: usize) -> Result<LabelDistribution> {
    if y >= k {
        return Err(Error::ClassOutOfRange {
            index: y,
            class_count: k,
        });
    }
    let mut row = Array1::<f32>::zeros(k);
    row[y] = 1.0;
    LabelDistribution::from_row(row)
}

/// `(1 - gamma)` at `y` and `gamma / (K - 1)` elsewhere.
pub fn smooth_label(y: usize, k: usize, gamma: f32) -> Result<LabelDistribution> {
    if y >= k {
        return Err(Error::ClassOutOfRange {
            index: y,
            class_count: k,
        });
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("{gamma} outside [0,1)"),
        });
    }
    if k < 2 && gamma > 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: "smoothing needs at least 2 classes".into(),
        });
    }
    let off = if k >= 2 { gamma / (k - 1) as f32 } else { 0.0 };
    let mut row = Array1::<f32>::from_elem(k, off);
    row[y] = 1.0 - gamma;
    LabelDistribution::from_row(row)
}

/// Teacher soft labels: `softmax(f(x; teacher) / T)` per sample. The teacher
/// is evaluated in inference mode (no augmentation-time randomness).
pub fn dark_label(
    teacher: &ClassifierModel,
    x: &ImageBatch,
    temperature: f32,
) -> Result<LabelDistribution> {
    let logits = teacher.logits(x);
    softmax_batch_with_temperature(logits.view(), temperature)
}

/// Keep `p[y]` fixed and permute the remaining entries uniformly at random.
pub fn shuffle_dark(p: ArrayView1<f32>, y: usize, rng: &mut Rng) -> Result<Array1<f32>> {
    check_true_class(p.len(), y)?;
    let mut others: Vec<f32> = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(_, &v)| v)
        .collect();
    rng.shuffle(&mut others);
    Ok(rebuild(p, y, &others))
}

/// Keep `p[y]` fixed and invert the rank order of the remaining entries: the
/// largest value moves to the position that held the smallest, and so on.
/// Ties are broken by ascending original index, so the map is deterministic.
pub fn reverse_dark(p: ArrayView1<f32>, y: usize) -> Result<Array1<f32>> {
    check_true_class(p.len(), y)?;
    let mut slots: Vec<(usize, f32)> = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(i, &v)| (i, v))
        .collect();
    // Positions ordered by ascending value (index breaks ties) receive the
    // values in descending order.
    slots.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let values_desc: Vec<f32> = slots.iter().rev().map(|&(_, v)| v).collect();
    let mut out = p.to_owned();
    for (&(pos, _), &v) in slots.iter().zip(values_desc.iter()) {
        out[pos] = v;
    }
    Ok(out)
}

fn check_true_class(k: usize, y: usize) -> Result<()> {
    if y >= k {
        return Err(Error::ClassOutOfRange {
            index: y,
            class_count: k,
        });
    }
    Ok(())
}

fn rebuild(p: ArrayView1<f32>, y: usize, others: &[f32]) -> Array1<f32> {
    let mut out = Array1::<f32>::zeros(p.len());
    out[y] = p[y];
    let mut it = others.iter();
    for i in 0..p.len() {
        if i != y {
            out[i] = *it.next().expect("k-1 shuffled entries");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Layer};
    use ndarray::{array, Array4};

    #[test]
    fn one_hot_basics() {
        assert_eq!(one_hot(2, 4).unwrap().row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap().row(0).to_vec(), vec![1.0]);
        assert!(one_hot(5, 3).is_err());
    }

    #[test]
    fn smooth_label_formula() {
        let p = smooth_label(0, 10, 0.1).unwrap();
        assert!((p.row(0)[0] - 0.9).abs() < 1e-7);
        for j in 1..10 {
            assert!((p.row(0)[j] - 0.1 / 9.0).abs() < 1e-7);
        }
        let degenerate = smooth_label(1, 3, 0.0).unwrap();
        assert_eq!(degenerate.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
        let half = smooth_label(1, 2, 0.5).unwrap();
        assert_eq!(half.row(0).to_vec(), vec![0.5, 0.5]);
        assert!(smooth_label(0, 1, 0.3).is_err());
    }

    #[test]
    fn dark_label_uniform_for_zero_teacher() {
        let mut rng = Rng::new(1, "dark");
        let mut teacher = build_model("linear", 4, (1, 3, 3), &mut rng).unwrap();
        for layer in teacher.layers_mut() {
            if let Layer::Dense { weight, bias } = layer {
                weight.fill(0.0);
                bias.fill(0.0);
            }
        }
        let x = ImageBatch::with_default_ids(Array4::from_elem((2, 1, 3, 3), 0.3)).unwrap();
        let p = dark_label(&teacher, &x, 1.0).unwrap();
        for &v in p.probs().iter() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn dark_label_high_temperature_approaches_uniform() {
        let mut rng = Rng::new(2, "dark");
        let teacher = build_model("mlp", 5, (1, 6, 6), &mut rng).unwrap();
        let x = ImageBatch::with_default_ids(Array4::from_shape_fn((3, 1, 6, 6), |_| {
            rng.next_f32()
        }))
        .unwrap();
        let p = dark_label(&teacher, &x, 1e6).unwrap();
        for &v in p.probs().iter() {
            assert!((v - 0.2).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn dark_label_matches_hand_computed_softmax() {
        let mut rng = Rng::new(3, "dark");
        let mut teacher = build_model("linear", 2, (1, 1, 1), &mut rng).unwrap();
        for layer in teacher.layers_mut() {
            if let Layer::Dense { weight, bias } = layer {
                weight[[0, 0]] = 2.0;
                weight[[1, 0]] = -1.0;
                bias.fill(0.0);
            }
        }
        let x = ImageBatch::with_default_ids(Array4::from_elem((1, 1, 1, 1), 0.5)).unwrap();
        let p = dark_label(&teacher, &x, 1.0).unwrap();
        // logits (1.0, -0.5): softmax by hand.
        let e0 = 1.0f64.exp();
        let e1 = (-0.5f64).exp();
        assert!((f64::from(p.row(0)[0]) - e0 / (e0 + e1)).abs() < 1e-6);
        assert!((f64::from(p.row(0)[1]) - e1 / (e0 + e1)).abs() < 1e-6);
    }

    #[test]
    fn shuffle_dark_with_two_classes_is_identity() {
        let p = array![0.7f32, 0.3];
        let out = shuffle_dark(p.view(), 0, &mut Rng::new(4, "sh")).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn shuffle_dark_preserves_true_prob_and_multiset() {
        let p = array![0.5f32, 0.3, 0.2];
        let mut seen = std::collections::HashSet::new();
        for trial in 0..64 {
            let out = shuffle_dark(p.view(), 0, &mut Rng::new(trial, "sh")).unwrap();
            assert_eq!(out[0], 0.5);
            let mut rest: Vec<f32> = vec![out[1], out[2]];
            rest.sort_by(f32::total_cmp);
            assert_eq!(rest, vec![0.2, 0.3]);
            seen.insert(out.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 2, "both permutations should occur");
    }

    #[test]
    fn shuffle_dark_sum_preserved_on_random_draws() {
        let mut rng = Rng::new(5, "sum");
        for _ in 0..1000 {
            let k = rng.range_inclusive(2, 9);
            let mut v: Vec<f32> = (0..k).map(|_| rng.next_f32() + 1e-3).collect();
            let sum: f32 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= sum);
            let p = Array1::from_vec(v);
            let y = rng.below(k as u64) as usize;
            let out = shuffle_dark(p.view(), y, &mut rng).unwrap();
            let total: f64 = out.iter().map(|&x| f64::from(x)).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn reverse_dark_adopted_definition() {
        let p = array![0.5f32, 0.3, 0.2];
        let out = reverse_dark(p.view(), 0).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.2, 0.3]);
    }

    #[test]
    fn reverse_dark_identity_cases() {
        // All non-true entries equal.
        let p = array![0.4f32, 0.3, 0.3];
        assert_eq!(reverse_dark(p.view(), 0).unwrap(), p);
        // K = 2: a single non-true entry.
        let p2 = array![0.7f32, 0.3];
        assert_eq!(reverse_dark(p2.view(), 0).unwrap(), p2);
    }

    #[test]
    fn reverse_dark_is_deterministic_with_ties() {
        let p = array![0.25f32, 0.25, 0.3, 0.2];
        let a = reverse_dark(p.view(), 2).unwrap();
        let b = reverse_dark(p.view(), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2], 0.3);
        // position of smallest (index 3) receives largest (0.25); ties between
        // the two 0.25 slots resolve by ascending index.
        assert_eq!(a.to_vec(), vec![0.25, 0.2, 0.3, 0.25]);
    }
}
