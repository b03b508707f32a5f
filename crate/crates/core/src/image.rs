//! Image batch container.

use ndarray::Array4;

use crate::error::{Error, Result};

/// A rank-4 batch of images `(n, c, h, w)` with values in `[0, 1]` and one
/// opaque id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    data: Array4<f32>,
    ids: Vec<String>,
}

impl ImageBatch {
    pub fn new(data: Array4<f32>, ids: Vec<String>) -> Result<Self> {
        let n = data.shape()[0];
        if n == 0 {
            return Err(Error::EmptyInput("image batch"));
        }
        if ids.len() != n {
            return Err(Error::ShapeMismatch {
                context: "image batch ids",
                expected: format!("{n}"),
                got: format!("{}", ids.len()),
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::PixelOutOfRange { value: v, index });
            }
        }
        Ok(ImageBatch { data, ids })
    }

    /// Build with ids `"s0".."s{n-1}"`.
    pub fn with_default_ids(data: Array4<f32>) -> Result<Self> {
        let n = data.shape()[0];
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        ImageBatch::new(data, ids)
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(c, h, w)` of a single sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }

    /// Select a subset of samples by index.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("image batch selection"));
        }
        let (c, h, w) = self.sample_shape();
        let mut out = Array4::<f32>::zeros((indices.len(), c, h, w));
        let mut ids = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.data.index_axis(ndarray::Axis(0), idx));
            ids.push(self.ids[idx].clone());
        }
        ImageBatch::new(out, ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut data = Array4::<f32>::zeros((1, 1, 2, 2));
        data[[0, 0, 0, 0]] = 1.5;
        assert!(ImageBatch::with_default_ids(data).is_err());
    }

    #[test]
    fn rejects_empty_batch() {
        let data = Array4::<f32>::zeros((0, 1, 2, 2));
        assert!(ImageBatch::with_default_ids(data).is_err());
    }

    #[test]
    fn select_preserves_ids() {
        let data = Array4::<f32>::from_elem((3, 1, 2, 2), 0.5);
        let batch = ImageBatch::with_default_ids(data).unwrap();
        let sub = batch.select(&[2, 0]).unwrap();
        assert_eq!(sub.ids(), &["s2".to_string(), "s0".to_string()]);
    }
}
