//! Probability vectors over classes, softmax, and cross-entropy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Floor applied to the second cross-entropy argument before taking logs.
pub const CE_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f32 = 1e-5;

/// A batch of per-sample probability vectors on the length-`K` simplex.
/// One-hot labels are the special case with a single unit entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Array2<f32>,
}

impl LabelDistribution {
    pub fn new(probs: Array2<f32>) -> Result<Self> {
        for row in probs.axis_iter(Axis(0)) {
            validate_simplex(row)?;
        }
        Ok(LabelDistribution { probs })
    }

    pub fn from_row(row: Array1<f32>) -> Result<Self> {
        let k = row.len();
        LabelDistribution::new(row.into_shape_with_order((1, k)).expect("row reshape"))
    }

    pub fn probs(&self) -> &Array2<f32> {
        &self.probs
    }

    pub fn into_probs(self) -> Array2<f32> {
        self.probs
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.probs.row(i)
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn class_count(&self) -> usize {
        self.probs.ncols()
    }
}

fn validate_simplex(row: ArrayView1<f32>) -> Result<()> {
    let mut sum = 0.0f64;
    for &p in row.iter() {
        if !p.is_finite() {
            return Err(Error::NonFinite {
                context: "label distribution",
            });
        }
        if p < 0.0 {
            return Err(Error::InvalidParameter {
                name: "label distribution",
                reason: format!("negative probability {p}"),
            });
        }
        sum += f64::from(p);
    }
    if (sum - 1.0).abs() > f64::from(SIMPLEX_TOL) {
        return Err(Error::InvalidParameter {
            name: "label distribution",
            reason: format!("probabilities sum to {sum}, not 1"),
        });
    }
    Ok(())
}

/// Numerically stabilized softmax of one logit vector.
pub fn softmax(z: ArrayView1<f32>) -> Result<Array1<f32>> {
    if z.is_empty() {
        return Err(Error::EmptyInput("softmax input"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "softmax" });
    }
    Ok(softmax_unchecked(z))
}

/// Softmax without the finiteness check, for inner loops that already
/// validated their inputs.
pub(crate) fn softmax_unchecked(z: ArrayView1<f32>) -> Array1<f32> {
    let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut out = Array1::<f32>::zeros(z.len());
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(z.iter()) {
        let e = f64::from(v - max).exp();
        *o = e as f32;
        sum += e;
    }
    let inv = (1.0 / sum) as f32;
    out.mapv_inplace(|v| v * inv);
    out
}

/// Row-wise softmax over a logits matrix `(n, K)`.
pub fn softmax_batch(logits: ArrayView2<f32>) -> Result<LabelDistribution> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "softmax" });
    }
    let mut out = Array2::<f32>::zeros(logits.raw_dim());
    for (mut row, z) in out.axis_iter_mut(Axis(0)).zip(logits.axis_iter(Axis(0))) {
        row.assign(&softmax_unchecked(z));
    }
    LabelDistribution::new(out)
}

/// Row-wise softmax of temperature-scaled logits, `softmax(z / T)`.
pub fn softmax_batch_with_temperature(
    logits: ArrayView2<f32>,
    temperature: f32,
) -> Result<LabelDistribution> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidParameter {
            name: "temperature",
            reason: format!("{temperature}"),
        });
    }
    let scaled = logits.mapv(|v| v / temperature);
    softmax_batch(scaled.view())
}

/// `-sum_i p_i log q_i`, with `q` floored at [`CE_FLOOR`].
pub fn cross_entropy(p: ArrayView1<f32>, q: ArrayView1<f32>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy",
            expected: format!("{}", p.len()),
            got: format!("{}", q.len()),
        });
    }
    let mut acc = 0.0f64;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi == 0.0 {
            continue;
        }
        acc -= f64::from(pi) * f64::from(qi).max(CE_FLOOR).ln();
    }
    Ok(acc)
}

/// Mean cross-entropy over paired rows of two distributions.
pub fn cross_entropy_mean(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.len() != q.len() || p.class_count() != q.class_count() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy_mean",
            expected: format!("{}x{}", p.len(), p.class_count()),
            got: format!("{}x{}", q.len(), q.class_count()),
        });
    }
    let mut acc = 0.0f64;
    for (pr, qr) in p.probs().axis_iter(Axis(0)).zip(q.probs().axis_iter(Axis(0))) {
        acc += cross_entropy(pr, qr)?;
    }
    Ok(acc / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_symmetry() {
        let out = softmax(array![0.0, 0.0].view()).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-7);
        assert!((out[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let out = softmax(array![1000.0, 1000.0, 1000.0].view()).unwrap();
        for &v in out.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_inverts_log() {
        let z = array![1.0f32.ln(), 2.0f32.ln(), 3.0f32.ln()];
        let out = softmax(z.view()).unwrap();
        assert!((out[0] - 1.0 / 6.0).abs() < 1e-6);
        assert!((out[1] - 2.0 / 6.0).abs() < 1e-6);
        assert!((out[2] - 3.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(array![f32::NAN, 0.0].view()).is_err());
        assert!(softmax(array![f32::INFINITY, 0.0].view()).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = crate::rng::Rng::new(9, "softmax-shift");
        for _ in 0..100 {
            let z: Array1<f32> = Array1::from_iter((0..6).map(|_| rng.next_f32() * 8.0 - 4.0));
            let shifted = z.mapv(|v| v + 3.25);
            let a = softmax(z.view()).unwrap();
            let b = softmax(shifted.view()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_entropy_identity_one_hot_is_zero() {
        let p = array![0.0f32, 1.0, 0.0];
        let ce = cross_entropy(p.view(), p.view()).unwrap();
        assert!(ce.abs() < 1e-9, "ce = {ce}");
    }

    #[test]
    fn cross_entropy_uniform_closed_form() {
        let p = Array1::<f32>::from_elem(10, 0.1);
        let ce = cross_entropy(p.view(), p.view()).unwrap();
        assert!((ce - 10.0f64.ln()).abs() < 1e-6, "ce = {ce}");
    }

    #[test]
    fn cross_entropy_one_hot_vs_half() {
        let p = array![1.0f32, 0.0];
        let q = array![0.5f32, 0.5];
        let ce = cross_entropy(p.view(), q.view()).unwrap();
        assert!((ce - 2.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_mismatched_k() {
        let p = array![1.0f32, 0.0];
        let q = array![1.0f32, 0.0, 0.0];
        assert!(cross_entropy(p.view(), q.view()).is_err());
    }

    #[test]
    fn gibbs_inequality_on_random_simplex_pairs() {
        let mut rng = crate::rng::Rng::new(17, "gibbs");
        for _ in 0..1000 {
            let k = rng.range_inclusive(2, 12);
            let p = random_simplex(&mut rng, k);
            let q = random_simplex(&mut rng, k);
            let cross = cross_entropy(p.view(), q.view()).unwrap();
            let this = cross_entropy(p.view(), p.view()).unwrap();
            assert!(cross >= this - 1e-9, "cross {cross} < entropy {this}");
        }
    }

    fn random_simplex(rng: &mut crate::rng::Rng, k: usize) -> Array1<f32> {
        let mut v: Array1<f32> =
            Array1::from_iter((0..k).map(|_| -(rng.next_f64().max(1e-9).ln()) as f32));
        let sum: f32 = v.sum();
        v.mapv_inplace(|x| x / sum);
        v
    }
}
