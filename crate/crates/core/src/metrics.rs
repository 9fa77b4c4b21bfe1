//! Full-reference image-quality metrics: SSIM, MS-SSIM, PSNR, MAE, NRMSE,
//! and the evaluation driver that scores a predictor over a test set.
//!
//! SSIM uses a Gaussian window (sigma 1.5) over valid positions only.
//! MS-SSIM runs one level per configured weight, downsampling by 2x
//! average pooling between levels, and combines the contrast-structure
//! terms of the coarser levels with the full SSIM of the last one.
//! NRMSE normalises by the value range of the target, so unlike the other
//! metrics it is not symmetric in its arguments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::batch::ImageBatch;
use crate::denoiser::NoisePredictor;
use crate::diffusion::{sample, SampleConfig, SamplerVariant};
use crate::error::CoreError;
use crate::math;
use crate::schedule::NoiseSchedule;
use crate::Result;

/// Stabilising-constant factors of the standard SSIM definition.
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Gaussian window standard deviation.
const WINDOW_SIGMA: f64 = 1.5;

/// Metric settings. `data_range` is the difference between the maximum
/// and minimum representable values, 2.0 for images in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub data_range: f64,
    pub ssim_kernel: usize,
    pub ms_ssim_weights: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            data_range: 2.0,
            ssim_kernel: 7,
            ms_ssim_weights: vec![0.0448, 0.2856, 0.3001],
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_range.is_finite() && self.data_range > 0.0) {
            return Err(CoreError::InvalidConfig("data_range must be > 0".into()));
        }
        if self.ssim_kernel < 3 || self.ssim_kernel.is_multiple_of(2) {
            return Err(CoreError::InvalidConfig(format!(
                "ssim_kernel must be odd and >= 3, got {}",
                self.ssim_kernel
            )));
        }
        if self.ms_ssim_weights.is_empty()
            || self.ms_ssim_weights.iter().any(|&w| !(w.is_finite() && w > 0.0))
        {
            return Err(CoreError::InvalidConfig(
                "ms_ssim_weights must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }

    /// Smallest height/width MS-SSIM accepts with these settings.
    pub fn ms_ssim_min_size(&self) -> usize {
        self.ssim_kernel << (self.ms_ssim_weights.len() - 1)
    }
}

/// Named scalar results of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ssim: f64,
    pub ms_ssim: f64,
    pub psnr: f64,
    pub mae: f64,
    pub nrmse: f64,
    pub n_images: usize,
}

fn gaussian_kernel(k: usize) -> Vec<f64> {
    let c = (k / 2) as f64;
    let mut kernel = vec![0.0; k];
    let mut sum = 0.0;
    for (i, v) in kernel.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = math::exp(-0.5 * d * d / (WINDOW_SIGMA * WINDOW_SIGMA));
        sum += *v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    kernel
}

/// Separable weighted local means over valid window positions.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    // Horizontal pass: (h, ow).
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass: (oh, ow).
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn check_pair(a: &ImageBatch, b: &ImageBatch, context: &'static str) -> Result<()> {
    a.require_same_shape(b, context)?;
    a.require_finite(context)?;
    b.require_finite(context)
}

fn check_single_channel(a: &ImageBatch, context: &'static str) -> Result<()> {
    if a.channels() != 1 {
        return Err(CoreError::InvalidData(format!(
            "{context} expects single-channel images, got {} channels",
            a.channels()
        )));
    }
    Ok(())
}

/// Mean SSIM and mean contrast-structure term of one image pair.
fn ssim_plane(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    data_range: f64,
) -> (f64, f64) {
    let c1 = (K1 * data_range) * (K1 * data_range);
    let c2 = (K2 * data_range) * (K2 * data_range);

    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(a, h, w, kernel);
    let mu_b = filter_valid(b, h, w, kernel);
    let e_aa = filter_valid(&aa, h, w, kernel);
    let e_bb = filter_valid(&bb, h, w, kernel);
    let e_ab = filter_valid(&ab, h, w, kernel);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let n = mu_a.len();
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / n as f64, cs_sum / n as f64)
}

fn ssim_and_cs(a: &ImageBatch, b: &ImageBatch, cfg: &MetricsConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_pair(a, b, "ssim")?;
    check_single_channel(a, "ssim")?;
    if a.height() < cfg.ssim_kernel || a.width() < cfg.ssim_kernel {
        return Err(CoreError::InvalidData(format!(
            "ssim needs images at least {0}x{0} for kernel {0}, got {1}x{2}",
            cfg.ssim_kernel,
            a.height(),
            a.width()
        )));
    }
    let kernel = gaussian_kernel(cfg.ssim_kernel);
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..a.batch() {
        let (s, c) = ssim_plane(
            a.plane(i, 0),
            b.plane(i, 0),
            a.height(),
            a.width(),
            &kernel,
            cfg.data_range,
        );
        ssim_sum += s;
        cs_sum += c;
    }
    let n = a.batch() as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

/// Mean windowed structural similarity over the batch.
pub fn ssim(a: &ImageBatch, b: &ImageBatch, cfg: &MetricsConfig) -> Result<f64> {
    Ok(ssim_and_cs(a, b, cfg)?.0)
}

fn halve(x: &ImageBatch) -> ImageBatch {
    // 2x average pooling, dropping a trailing odd row/column.
    let (bn, cn, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = ImageBatch::zeros(bn, cn, oh, ow);
    for b in 0..bn {
        for c in 0..cn {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..oh {
                for xx in 0..ow {
                    let r0 = 2 * y * w + 2 * xx;
                    let r1 = r0 + w;
                    dst[y * ow + xx] =
                        0.25 * (src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1]);
                }
            }
        }
    }
    out
}

/// Multi-scale SSIM with one level per configured weight.
pub fn ms_ssim(a: &ImageBatch, b: &ImageBatch, cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(a, b, "ms_ssim")?;
    check_single_channel(a, "ms_ssim")?;
    let levels = cfg.ms_ssim_weights.len();
    let min_size = cfg.ms_ssim_min_size();
    if a.height() < min_size || a.width() < min_size {
        return Err(CoreError::InvalidData(format!(
            "ms_ssim with {levels} levels and kernel {} needs images at least {min_size}x{min_size}, got {}x{}",
            cfg.ssim_kernel,
            a.height(),
            a.width()
        )));
    }

    let mut ca = a.clone();
    let mut cb = b.clone();
    let mut result = 1.0;
    for (level, &weight) in cfg.ms_ssim_weights.iter().enumerate() {
        let (s, cs) = ssim_and_cs(&ca, &cb, cfg)?;
        let term = if level == levels - 1 { s } else { cs };
        // Negative similarity terms are floored at zero before weighting.
        result *= math::powf(term.max(0.0), weight);
        if level < levels - 1 {
            ca = halve(&ca);
            cb = halve(&cb);
        }
    }
    Ok(result)
}

/// Peak signal-to-noise ratio in decibels; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageBatch, b: &ImageBatch, cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(a, b, "psnr")?;
    let mse = a.mean_squared_error(b);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(cfg.data_range * cfg.data_range / mse))
}

/// Mean absolute error.
pub fn mae(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    check_pair(a, b, "mae")?;
    let n = a.len() as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| math::abs(x - y))
        .sum::<f64>()
        / n)
}

/// Root-mean-square error normalised by the value range of the target
/// `b`. Rejects constant targets (zero range).
pub fn nrmse(a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    check_pair(a, b, "nrmse")?;
    let range = b.max_value() - b.min_value();
    if range == 0.0 {
        return Err(CoreError::InvalidData(
            "nrmse target is constant; its value range is zero".into(),
        ));
    }
    Ok(math::sqrt(a.mean_squared_error(b)) / range)
}

/// Scores `predictor` over the test batches: generates one output per
/// test input through the full reverse process (saving only the final
/// state), computes all five metrics per batch, and averages them by
/// batch count.
pub fn evaluate(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    test_batches: &[(ImageBatch, ImageBatch)],
    cfg: &MetricsConfig,
    variant: SamplerVariant,
    seed: u64,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if test_batches.is_empty() {
        return Err(CoreError::InvalidData("no test batches supplied".into()));
    }
    let mut acc = MetricsReport {
        ssim: 0.0,
        ms_ssim: 0.0,
        psnr: 0.0,
        mae: 0.0,
        nrmse: 0.0,
        n_images: 0,
    };
    for (batch_idx, (low, high)) in test_batches.iter().enumerate() {
        let run = |r: Result<f64>| -> Result<f64> {
            r.map_err(|e| {
                CoreError::InvalidData(format!("evaluate batch {batch_idx}: {e}"))
            })
        };
        let sample_cfg = SampleConfig::new(
            low.batch(),
            high.channels(),
            low.height(),
            low.width(),
            vec![0],
            variant,
            seed.wrapping_add(batch_idx as u64),
        );
        let record = sample(predictor, Some(low), schedule, &sample_cfg)
            .map_err(|e| CoreError::InvalidData(format!("evaluate batch {batch_idx}: {e}")))?;
        let generated = record
            .final_images()
            .expect("save_at = {0} always yields a final state");
        acc.ssim += run(ssim(generated, high, cfg))?;
        acc.ms_ssim += run(ms_ssim(generated, high, cfg))?;
        acc.psnr += run(psnr(generated, high, cfg))?;
        acc.mae += run(mae(generated, high))?;
        acc.nrmse += run(nrmse(generated, high))?;
        acc.n_images += low.batch();
    }
    let n = test_batches.len() as f64;
    acc.ssim /= n;
    acc.ms_ssim /= n;
    acc.psnr /= n;
    acc.mae /= n;
    acc.nrmse /= n;
    Ok(acc)
}
