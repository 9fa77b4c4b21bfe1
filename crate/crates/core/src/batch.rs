//! Batched image storage.
//!
//! [`ImageBatch`] is a dense 4-D array in batch–channel–height–width
//! layout. Clean images live in `[-1, 1]`; noisy intermediates of the
//! diffusion process may leave that range, so only finiteness and
//! positive dimensions are enforced here.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::rng::Rng;
use crate::Result;

/// Dense `(batch, channels, height, width)` array of `f64` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    data: Vec<f64>,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl ImageBatch {
    /// Builds a batch from raw data, rejecting empty dimensions, length
    /// mismatches, and non-finite values.
    pub fn new(
        data: Vec<f64>,
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidData(format!(
                "image batch dimensions must all be >= 1, got ({batch}, {channels}, {height}, {width})"
            )));
        }
        let expected = batch * channels * height * width;
        if data.len() != expected {
            return Err(CoreError::ShapeMismatch {
                context: "ImageBatch::new",
                expected: format!("{expected} elements"),
                got: format!("{}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("ImageBatch::new"));
        }
        Ok(ImageBatch {
            data,
            batch,
            channels,
            height,
            width,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        ImageBatch {
            data: vec![0.0; batch * channels * height * width],
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn full(batch: usize, channels: usize, height: usize, width: usize, value: f64) -> Self {
        ImageBatch {
            data: vec![value; batch * channels * height * width],
            batch,
            channels,
            height,
            width,
        }
    }

    /// Standard-normal batch drawn from `rng`.
    pub fn standard_normal(
        rng: &mut Rng,
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let mut data = vec![0.0; batch * channels * height * width];
        rng.fill_standard_normal(&mut data);
        ImageBatch {
            data,
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    pub fn dims_string(&self) -> String {
        format!(
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Number of pixels per sample (`channels * height * width`).
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// One channel plane of one sample.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        let start = (b * self.channels + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let hw = self.height * self.width;
        let start = (b * self.channels + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn same_shape(&self, other: &ImageBatch) -> bool {
        self.dims() == other.dims()
    }

    pub fn require_same_shape(&self, other: &ImageBatch, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                context,
                expected: self.dims_string(),
                got: other.dims_string(),
            })
        }
    }

    pub fn require_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite(context))
        }
    }

    /// Elementwise map into a new batch.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBatch {
        let data = self.data.iter().map(|&v| f(v)).collect();
        ImageBatch { data, ..*self }
    }

    /// Elementwise combine with another batch of identical shape.
    pub fn zip(&self, other: &ImageBatch, f: impl Fn(f64, f64) -> f64) -> ImageBatch {
        debug_assert!(self.same_shape(other));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        ImageBatch { data, ..*self }
    }

    /// `a * self + b * other`, broadcasting the scalars per sample.
    /// `a` and `b` hold one coefficient per batch element.
    pub fn per_sample_axpy(&self, a: &[f64], other: &ImageBatch, b: &[f64]) -> ImageBatch {
        debug_assert!(self.same_shape(other));
        debug_assert_eq!(a.len(), self.batch);
        debug_assert_eq!(b.len(), self.batch);
        let mut out = ImageBatch::zeros(self.batch, self.channels, self.height, self.width);
        let n = self.sample_len();
        for i in 0..self.batch {
            let (ca, cb) = (a[i], b[i]);
            let xs = &self.data[i * n..(i + 1) * n];
            let ys = &other.data[i * n..(i + 1) * n];
            let os = &mut out.data[i * n..(i + 1) * n];
            for ((o, &x), &y) in os.iter_mut().zip(xs).zip(ys) {
                *o = ca * x + cb * y;
            }
        }
        out
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageBatch {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Concatenates `front` and `back` along the channel axis, `front`
    /// channels first.
    pub fn concat_channels(front: &ImageBatch, back: &ImageBatch) -> Result<ImageBatch> {
        if front.batch != back.batch || front.height != back.height || front.width != back.width {
            return Err(CoreError::ShapeMismatch {
                context: "concat_channels",
                expected: front.dims_string(),
                got: back.dims_string(),
            });
        }
        let channels = front.channels + back.channels;
        let mut out = ImageBatch::zeros(front.batch, channels, front.height, front.width);
        let hw = front.height * front.width;
        for b in 0..front.batch {
            for c in 0..front.channels {
                out.plane_mut(b, c).copy_from_slice(front.plane(b, c));
            }
            for c in 0..back.channels {
                out.plane_mut(b, front.channels + c)
                    .copy_from_slice(back.plane(b, c));
            }
        }
        debug_assert_eq!(out.sample_len(), channels * hw);
        Ok(out)
    }

    /// Extracts a contiguous channel range as a new batch.
    pub fn channel_range(&self, start: usize, count: usize) -> ImageBatch {
        debug_assert!(start + count <= self.channels);
        let mut out = ImageBatch::zeros(self.batch, count, self.height, self.width);
        for b in 0..self.batch {
            for c in 0..count {
                out.plane_mut(b, c).copy_from_slice(self.plane(b, start + c));
            }
        }
        out
    }

    /// Gathers the listed samples into a new batch, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> ImageBatch {
        let mut out = ImageBatch::zeros(indices.len(), self.channels, self.height, self.width);
        for (dst, &src) in indices.iter().enumerate() {
            out.sample_mut(dst).copy_from_slice(self.sample(src));
        }
        out
    }

    /// Mean of elementwise squared differences.
    pub fn mean_squared_error(&self, other: &ImageBatch) -> f64 {
        debug_assert!(self.same_shape(other));
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension() {
        assert!(ImageBatch::new(vec![], 0, 1, 1, 1).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(ImageBatch::new(vec![0.0; 5], 1, 1, 2, 2).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = ImageBatch::new(vec![0.0, f64::NAN, 0.0, 0.0], 1, 1, 2, 2).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite(_)));
    }

    #[test]
    fn concat_puts_front_channels_first() {
        let a = ImageBatch::full(1, 1, 2, 2, 1.0);
        let b = ImageBatch::full(1, 2, 2, 2, 2.0);
        let c = ImageBatch::concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), (1, 3, 2, 2));
        assert_eq!(c.plane(0, 0), &[1.0; 4]);
        assert_eq!(c.plane(0, 1), &[2.0; 4]);
        assert_eq!(c.plane(0, 2), &[2.0; 4]);
    }

    #[test]
    fn channel_range_extracts_planes() {
        let a = ImageBatch::full(1, 1, 2, 2, 1.0);
        let b = ImageBatch::full(1, 1, 2, 2, 2.0);
        let c = ImageBatch::concat_channels(&a, &b).unwrap();
        assert_eq!(c.channel_range(1, 1).as_slice(), &[2.0; 4]);
    }

    #[test]
    fn per_sample_axpy_broadcasts() {
        let x = ImageBatch::full(2, 1, 1, 2, 1.0);
        let y = ImageBatch::full(2, 1, 1, 2, 10.0);
        let out = x.per_sample_axpy(&[2.0, 3.0], &y, &[0.5, 0.0]);
        assert_eq!(out.sample(0), &[7.0, 7.0]);
        assert_eq!(out.sample(1), &[3.0, 3.0]);
    }

    #[test]
    fn select_samples_reorders() {
        let mut x = ImageBatch::zeros(3, 1, 1, 1);
        x.as_mut_slice().copy_from_slice(&[1.0, 2.0, 3.0]);
        let y = x.select_samples(&[2, 0]);
        assert_eq!(y.as_slice(), &[3.0, 1.0]);
    }
}
