//! Desk-scale synthetic dataset: random Gaussian blobs as high-resolution
//! targets, Gaussian-blurred copies as their low-resolution inputs.

use alloc::format;
use alloc::vec;

use crate::batch::ImageBatch;
use crate::data::PairedDataset;
use crate::error::CoreError;
use crate::math;
use crate::rng::Rng;
use crate::Result;

/// Parameters of the generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    /// Square image side length.
    pub image_size: usize,
    /// Gaussian bumps summed into each target image.
    pub blobs_per_image: usize,
    /// Standard deviation of the blur producing the low-resolution
    /// counterpart; 0 keeps the pair identical.
    pub blur_radius: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pairs: 64,
            image_size: 16,
            blobs_per_image: 3,
            blur_radius: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.image_size == 0 || self.blobs_per_image == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "synthetic spec needs n_pairs, image_size, blobs_per_image all >= 1, got ({}, {}, {})",
                self.n_pairs, self.image_size, self.blobs_per_image
            )));
        }
        if !(self.blur_radius.is_finite() && self.blur_radius >= 0.0) {
            return Err(CoreError::InvalidConfig(
                "blur_radius must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with clamp-to-edge padding. `sigma = 0` is the
/// identity.
pub fn gaussian_blur(image: &ImageBatch, sigma: f64) -> ImageBatch {
    if sigma == 0.0 {
        return image.clone();
    }
    let half = math::ceil(3.0 * sigma) as isize;
    let mut kernel = vec![0.0; (2 * half + 1) as usize];
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - half as f64;
        *k = math::exp(-0.5 * d * d / (sigma * sigma));
        sum += *k;
    }
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let (bn, cn, h, w) = image.dims();
    let mut horizontal = ImageBatch::zeros(bn, cn, h, w);
    for b in 0..bn {
        for c in 0..cn {
            let src = image.plane(b, c);
            let dst = horizontal.plane_mut(b, c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (i, &k) in kernel.iter().enumerate() {
                        let xx = (x as isize + i as isize - half).clamp(0, w as isize - 1);
                        acc += k * src[y * w + xx as usize];
                    }
                    dst[y * w + x] = acc;
                }
            }
        }
    }
    let mut out = ImageBatch::zeros(bn, cn, h, w);
    for b in 0..bn {
        for c in 0..cn {
            let src = horizontal.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (i, &k) in kernel.iter().enumerate() {
                        let yy = (y as isize + i as isize - half).clamp(0, h as isize - 1);
                        acc += k * src[yy as usize * w + x];
                    }
                    dst[y * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Generates the paired dataset described by `spec`, deterministically in
/// its seed. Targets are normalised to `[-1, 1]` before blurring, so the
/// blurred inputs stay inside the range too.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = Rng::seed_from(spec.seed);
    let size = spec.image_size;
    let mut high = ImageBatch::zeros(spec.n_pairs, 1, size, size);

    for b in 0..spec.n_pairs {
        let plane = high.plane_mut(b, 0);
        for _ in 0..spec.blobs_per_image {
            let cy = rng.uniform(0.0, size as f64);
            let cx = rng.uniform(0.0, size as f64);
            let amp = rng.uniform(0.5, 1.0);
            let sigma = rng.uniform(1.0, 2.0);
            for y in 0..size {
                for x in 0..size {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    plane[y * size + x] +=
                        amp * math::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
                }
            }
        }
        let peak = plane.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        for v in plane.iter_mut() {
            *v = (*v / peak - 0.5) / 0.5;
        }
    }

    let low = gaussian_blur(&high, spec.blur_radius);
    PairedDataset::new(low, high)
}
