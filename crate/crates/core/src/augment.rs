//! Mixing augmentations: Cutout, Mixup, CutMix.
//!
//! Every augmentation is expressed through the unified mask form
//! `mixed = x (*) M + x' (*) (1 - M)`, where `M` is a per-call mask shared by
//! the batch, `x'` is the partner image (the all-zero image for Cutout), and
//! `(*)` is the elementwise product. The mixed batch is computed literally
//! through that expression so the identity holds exactly.

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::label::LabelDistribution;
use crate::rng::Rng;

/// Output of one mixing-augmentation call.
#[derive(Debug, Clone)]
pub struct MixResult {
    pub mixed: ImageBatch,
    /// Mask with the shape of one image. Binary for Cutout/CutMix; the
    /// constant-lambda blend for Mixup.
    pub mask: Array3<f32>,
    /// Label mixing weight: the fraction of the image kept from `x`.
    pub lambda: f32,
    /// Partner sample index per sample; for Cutout each sample partners the
    /// all-zero image and the entry is its own index.
    pub partner_index: Vec<usize>,
}

/// Which mixing augmentation a training run applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    None,
    Cutout,
    Mixup,
    Cutmix,
}

/// Zero out a `mask_side` square at a uniformly chosen interior position.
/// The partner image is all-zero, so the masked area becomes black.
pub fn cutout(x: &ImageBatch, mask_side: usize, rng: &mut Rng) -> Result<MixResult> {
    let (c, h, w) = x.sample_shape();
    if mask_side == 0 || mask_side > h.min(w) {
        return Err(Error::InvalidParameter {
            name: "mask_side",
            reason: format!("{mask_side} not in 1..={}", h.min(w)),
        });
    }
    let top = rng.range_inclusive(0, h - mask_side);
    let left = rng.range_inclusive(0, w - mask_side);
    let mut mask = Array3::<f32>::ones((c, h, w));
    for ch in 0..c {
        for y in top..top + mask_side {
            for xx in left..left + mask_side {
                mask[[ch, y, xx]] = 0.0;
            }
        }
    }
    let zeros = Array4::<f32>::zeros(x.data().raw_dim());
    let mixed = apply_mask(x.data(), &zeros, &mask);
    let lambda = 1.0 - (mask_side * mask_side) as f32 / (h * w) as f32;
    let mixed = ImageBatch::new(mixed, x.ids().to_vec())?;
    Ok(MixResult {
        mixed,
        mask,
        lambda,
        partner_index: (0..x.len()).collect(),
    })
}

/// Blend `lambda * x + (1 - lambda) * x_ref` through the constant mask.
pub fn mixup(
    x: &ImageBatch,
    x_ref: &ImageBatch,
    partner_index: Vec<usize>,
    lambda: f32,
) -> Result<MixResult> {
    if x.data().raw_dim() != x_ref.data().raw_dim() {
        return Err(Error::ShapeMismatch {
            context: "mixup",
            expected: format!("{:?}", x.data().shape()),
            got: format!("{:?}", x_ref.data().shape()),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("{lambda} outside [0,1]"),
        });
    }
    let (c, h, w) = x.sample_shape();
    let mask = Array3::<f32>::from_elem((c, h, w), lambda);
    let mixed = apply_mask(x.data(), x_ref.data(), &mask);
    let mixed = ImageBatch::new(mixed, x.ids().to_vec())?;
    Ok(MixResult {
        mixed,
        mask,
        lambda,
        partner_index,
    })
}

/// Paste a rectangle of `x_ref` into `x`. The rectangle's side ratio is
/// `sqrt(1 - lambda0)` with `lambda0 ~ Beta(alpha, alpha)`; the center is
/// uniform over the image and the rectangle is clipped at the borders, after
/// which lambda is recomputed from the true pasted area.
pub fn cutmix(
    x: &ImageBatch,
    x_ref: &ImageBatch,
    partner_index: Vec<usize>,
    alpha: f64,
    rng: &mut Rng,
) -> Result<MixResult> {
    let lambda0 = sample_lambda(alpha, rng)?;
    let (_, h, w) = x.sample_shape();
    let rect = sample_cutmix_rect(h, w, lambda0, rng);
    cutmix_with_rect(x, x_ref, partner_index, rect)
}

/// A half-open pasted region `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }
}

/// Uniform-center rectangle with area ratio `1 - lambda0`, clipped at borders.
pub fn sample_cutmix_rect(h: usize, w: usize, lambda0: f64, rng: &mut Rng) -> Rect {
    let ratio = (1.0 - lambda0).max(0.0).sqrt();
    let cut_h = (h as f64 * ratio) as usize;
    let cut_w = (w as f64 * ratio) as usize;
    let cy = rng.below(h as u64) as usize;
    let cx = rng.below(w as u64) as usize;
    Rect {
        top: cy.saturating_sub(cut_h / 2),
        bottom: (cy + cut_h.div_ceil(2)).min(h),
        left: cx.saturating_sub(cut_w / 2),
        right: (cx + cut_w.div_ceil(2)).min(w),
    }
}

/// CutMix with an explicit rectangle; lambda is the kept-area fraction.
pub fn cutmix_with_rect(
    x: &ImageBatch,
    x_ref: &ImageBatch,
    partner_index: Vec<usize>,
    rect: Rect,
) -> Result<MixResult> {
    if x.data().raw_dim() != x_ref.data().raw_dim() {
        return Err(Error::ShapeMismatch {
            context: "cutmix",
            expected: format!("{:?}", x.data().shape()),
            got: format!("{:?}", x_ref.data().shape()),
        });
    }
    let (c, h, w) = x.sample_shape();
    let mut mask = Array3::<f32>::ones((c, h, w));
    for ch in 0..c {
        for y in rect.top..rect.bottom {
            for xx in rect.left..rect.right {
                mask[[ch, y, xx]] = 0.0;
            }
        }
    }
    let lambda = 1.0 - rect.area() as f32 / (h * w) as f32;
    let mixed = apply_mask(x.data(), x_ref.data(), &mask);
    let mixed = ImageBatch::new(mixed, x.ids().to_vec())?;
    Ok(MixResult {
        mixed,
        mask,
        lambda,
        partner_index,
    })
}

/// One draw from Beta(alpha, alpha).
pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha} must be positive"),
        });
    }
    Ok(rng.beta(alpha, alpha))
}

/// The mixed-pair label `lambda * e_y + (1 - lambda) * e_y'`, with the two
/// contributions summed when `y == y'`.
pub fn pseudo_label(lambda: f32, y: usize, y_prime: usize, k: usize) -> Result<LabelDistribution> {
    if y >= k {
        return Err(Error::ClassOutOfRange {
            index: y,
            class_count: k,
        });
    }
    if y_prime >= k {
        return Err(Error::ClassOutOfRange {
            index: y_prime,
            class_count: k,
        });
    }
    let mut row = ndarray::Array1::<f32>::zeros(k);
    row[y] += lambda;
    row[y_prime] += 1.0 - lambda;
    LabelDistribution::from_row(row)
}

/// Random pairing of batch indices, avoiding self-pairs whenever `n > 1`.
pub fn partner_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm = rng.permutation(n);
    if n > 1 {
        for i in 0..n {
            if perm[i] == i {
                let j = (i + 1) % n;
                perm.swap(i, j);
            }
        }
    }
    perm
}

fn apply_mask(x: &Array4<f32>, x_ref: &Array4<f32>, mask: &Array3<f32>) -> Array4<f32> {
    let mut out = Array4::<f32>::zeros(x.raw_dim());
    for ((mut o, xs), rs) in out
        .axis_iter_mut(Axis(0))
        .zip(x.axis_iter(Axis(0)))
        .zip(x_ref.axis_iter(Axis(0)))
    {
        ndarray::Zip::from(&mut o)
            .and(&xs)
            .and(&rs)
            .and(mask)
            .for_each(|o, &a, &b, &m| *o = a * m + b * (1.0 - m));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, h: usize, w: usize, fill: f32) -> ImageBatch {
        ImageBatch::with_default_ids(Array4::from_elem((n, 1, h, w), fill)).unwrap()
    }

    fn random_batch(n: usize, h: usize, w: usize, rng: &mut Rng) -> ImageBatch {
        ImageBatch::with_default_ids(Array4::from_shape_fn((n, 1, h, w), |_| rng.next_f32()))
            .unwrap()
    }

    #[test]
    fn cutout_full_mask_blacks_out_everything() {
        let x = batch(2, 8, 8, 0.7);
        let res = cutout(&x, 8, &mut Rng::new(1, "co")).unwrap();
        assert_eq!(res.lambda, 0.0);
        assert!(res.mixed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutout_interior_area_arithmetic() {
        let x = batch(1, 32, 32, 0.5);
        let res = cutout(&x, 16, &mut Rng::new(2, "co")).unwrap();
        let zeroed = res.mixed.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeroed, 256);
        assert!((res.lambda - 0.75).abs() < 1e-7);
    }

    #[test]
    fn cutout_single_pixel() {
        let x = batch(1, 8, 8, 0.9);
        let res = cutout(&x, 1, &mut Rng::new(3, "co")).unwrap();
        let zeroed = res.mixed.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeroed, 1);
    }

    #[test]
    fn cutout_rejects_oversized_mask() {
        let x = batch(1, 8, 8, 0.9);
        assert!(cutout(&x, 9, &mut Rng::new(3, "co")).is_err());
        assert!(cutout(&x, 0, &mut Rng::new(3, "co")).is_err());
    }

    #[test]
    fn mixup_identity_cases() {
        let x = batch(2, 4, 4, 1.0);
        let r = batch(2, 4, 4, 0.0);
        let partners = vec![1, 0];
        let at1 = mixup(&x, &r, partners.clone(), 1.0).unwrap();
        assert_eq!(at1.mixed.data(), x.data());
        let at0 = mixup(&x, &r, partners.clone(), 0.0).unwrap();
        assert_eq!(at0.mixed.data(), r.data());
        let half = mixup(&x, &r, partners, 0.5).unwrap();
        assert!(half.mixed.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn cutmix_rect_area_identity() {
        let mut rng = Rng::new(5, "cm");
        let x = random_batch(2, 32, 32, &mut rng);
        let r = random_batch(2, 32, 32, &mut rng);
        let rect = Rect {
            top: 4,
            bottom: 20,
            left: 8,
            right: 24,
        };
        let res = cutmix_with_rect(&x, &r, vec![1, 0], rect).unwrap();
        assert!((res.lambda - 0.75).abs() < 1e-7);
        // Kept-area fraction equals 1 - |{M=0}| / (h*w), exactly.
        let zero_frac =
            res.mask.iter().filter(|&&m| m == 0.0).count() as f32 / (32.0 * 32.0);
        assert_eq!(res.lambda, 1.0 - zero_frac);
    }

    #[test]
    fn cutmix_degenerate_rects() {
        let mut rng = Rng::new(6, "cm");
        let x = random_batch(1, 8, 8, &mut rng);
        let r = random_batch(1, 8, 8, &mut rng);
        let zero = Rect { top: 0, bottom: 0, left: 0, right: 0 };
        let res = cutmix_with_rect(&x, &r, vec![0], zero).unwrap();
        assert_eq!(res.lambda, 1.0);
        assert_eq!(res.mixed.data(), x.data());
        let full = Rect { top: 0, bottom: 8, left: 0, right: 8 };
        let res = cutmix_with_rect(&x, &r, vec![0], full).unwrap();
        assert_eq!(res.lambda, 0.0);
        assert_eq!(res.mixed.data(), r.data());
    }

    #[test]
    fn unified_mask_identity_holds_exactly() {
        let mut rng = Rng::new(7, "unified");
        let x = random_batch(3, 12, 12, &mut rng);
        let r = random_batch(3, 12, 12, &mut rng);
        let partners = partner_permutation(3, &mut rng);
        let results = vec![
            cutout(&x, 6, &mut rng).unwrap(),
            mixup(&x, &r, partners.clone(), 0.3).unwrap(),
            cutmix(&x, &r, partners, 1.0, &mut rng).unwrap(),
        ];
        let zeros = Array4::<f32>::zeros(x.data().raw_dim());
        for (i, res) in results.iter().enumerate() {
            let partner = if i == 0 { &zeros } else { r.data() };
            let expect = apply_mask(x.data(), partner, &res.mask);
            assert_eq!(res.mixed.data(), &expect, "augmentation {i}");
            assert!(res.mixed.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn sample_lambda_uniform_at_alpha_one() {
        let mut rng = Rng::new(8, "beta");
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_lambda(1.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sample_lambda_bimodal_at_small_alpha() {
        let mut rng = Rng::new(9, "beta");
        let n = 100_000;
        let extreme = (0..n)
            .map(|_| sample_lambda(0.1, &mut rng).unwrap())
            .filter(|&l| !(0.05..=0.95).contains(&l))
            .count();
        // Beta(0.1, 0.1): P(l < 0.05 or l > 0.95) = 0.742 by the regularized
        // incomplete beta function; demand comfortably above one half.
        assert!(extreme as f64 > 0.5 * n as f64, "extreme fraction {}", extreme as f64 / n as f64);
    }

    #[test]
    fn sample_lambda_concentrates_with_large_alpha() {
        let mut rng = Rng::new(10, "beta");
        let n = 50_000;
        let var = |alpha: f64, rng: &mut Rng| {
            let draws: Vec<f64> = (0..n).map(|_| sample_lambda(alpha, rng).unwrap()).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / n as f64
        };
        assert!(var(4.0, &mut rng) < var(1.0, &mut rng));
    }

    #[test]
    fn sample_lambda_rejects_nonpositive_alpha() {
        assert!(sample_lambda(0.0, &mut Rng::new(0, "a")).is_err());
        assert!(sample_lambda(-1.0, &mut Rng::new(0, "a")).is_err());
    }

    #[test]
    fn pseudo_label_definition() {
        let p = pseudo_label(0.3, 0, 2, 3).unwrap();
        let row = p.row(0);
        assert!((row[0] - 0.3).abs() < 1e-7);
        assert_eq!(row[1], 0.0);
        assert!((row[2] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn pseudo_label_degenerate_cases() {
        let same = pseudo_label(0.4, 1, 1, 3).unwrap();
        assert_eq!(same.row(0)[1], 1.0);
        let full = pseudo_label(1.0, 0, 2, 3).unwrap();
        assert_eq!(full.row(0)[0], 1.0);
        assert!(pseudo_label(0.5, 3, 0, 3).is_err());
    }

    #[test]
    fn partner_permutation_avoids_self_pairs() {
        let mut rng = Rng::new(11, "perm");
        for n in [2usize, 3, 7, 32] {
            let p = partner_permutation(n, &mut rng);
            assert!(p.iter().enumerate().all(|(i, &j)| i != j), "n={n}: {p:?}");
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fixed_rng_makes_augmentations_deterministic() {
        let mut rng = Rng::new(12, "det");
        let x = random_batch(2, 10, 10, &mut rng);
        let r = random_batch(2, 10, 10, &mut rng);
        let a = cutmix(&x, &r, vec![1, 0], 0.5, &mut Rng::new(1, "cm")).unwrap();
        let b = cutmix(&x, &r, vec![1, 0], 0.5, &mut Rng::new(1, "cm")).unwrap();
        assert_eq!(a.mixed.data(), b.mixed.data());
        assert_eq!(a.lambda, b.lambda);
    }
}
