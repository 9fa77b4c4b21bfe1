//! Forward-corruption and reverse-sampling procedures.
//!
//! All operations are stateless given a [`NoiseSchedule`] and, for the
//! reverse direction, a [`NoisePredictor`]. Two reverse-step variants are
//! provided: the simplified recursion that injects `sqrt(beta_t)` noise
//! around the simplified posterior mean, and the posterior variant that
//! reconstructs the clean image first (clamping it to `[-1, 1]`) and uses
//! the clipped posterior log-variance. The final step of either variant
//! is deterministic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::batch::ImageBatch;
use crate::denoiser::NoisePredictor;
use crate::error::CoreError;
use crate::math;
use crate::posenc;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::Result;

/// Which reverse-step rule [`sample`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerVariant {
    /// Simplified posterior mean plus `sqrt(beta_t)` noise. Never clamps.
    Simplified,
    /// Clean-image reconstruction (clamped to `[-1, 1]` by default) fed
    /// into the exact posterior mean, with `exp(0.5 * log beta~_t)` noise.
    Posterior,
}

/// States recorded while sampling, newest (largest timestep) first.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Batch state at each saved timestep; `images[i]` corresponds to
    /// `saved_at[i]`.
    pub images: Vec<ImageBatch>,
    /// Saved timestep indices, strictly descending. If 0 is requested the
    /// final entry is the fully denoised output.
    pub saved_at: Vec<usize>,
}

impl TrajectoryRecord {
    /// The fully denoised output, present when timestep 0 was saved.
    pub fn final_images(&self) -> Option<&ImageBatch> {
        match self.saved_at.last() {
            Some(0) => self.images.last(),
            _ => None,
        }
    }
}

/// One forward step: `x_next = sqrt(1 - beta_t) * x_t + sqrt(beta_t) * noise`.
pub fn forward_step(
    x_t: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &ImageBatch,
) -> Result<ImageBatch> {
    schedule.check_timestep(t)?;
    x_t.require_same_shape(noise, "forward_step")?;
    let keep = math::sqrt(1.0 - schedule.beta[t]);
    let add = math::sqrt(schedule.beta[t]);
    Ok(x_t.zip(noise, |x, n| keep * x + add * n))
}

/// Jumps straight from the clean image to its step-`t` corruption:
/// `x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise`.
///
/// Timesteps may differ per batch element; the schedule coefficients are
/// broadcast per sample. Returns the corrupted batch together with the
/// exact noise used, which is the training target of the loss.
pub fn forward_jump(
    x0: &ImageBatch,
    timesteps: &[usize],
    schedule: &NoiseSchedule,
    noise: &ImageBatch,
) -> Result<(ImageBatch, ImageBatch)> {
    x0.require_same_shape(noise, "forward_jump")?;
    if timesteps.len() != x0.batch() {
        return Err(CoreError::ShapeMismatch {
            context: "forward_jump",
            expected: format!("{} timesteps", x0.batch()),
            got: format!("{}", timesteps.len()),
        });
    }
    let mut signal = vec![0.0; x0.batch()];
    let mut corrupt = vec![0.0; x0.batch()];
    for (i, &t) in timesteps.iter().enumerate() {
        schedule.check_timestep(t)?;
        signal[i] = math::sqrt(schedule.alpha_bar[t]);
        corrupt[i] = math::sqrt(1.0 - schedule.alpha_bar[t]);
    }
    let noisy = x0.per_sample_axpy(&signal, noise, &corrupt);
    Ok((noisy, noise.clone()))
}

/// Draws fresh standard-normal noise and applies [`forward_jump`].
pub fn forward_jump_with_rng(
    x0: &ImageBatch,
    timesteps: &[usize],
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(ImageBatch, ImageBatch)> {
    let noise =
        ImageBatch::standard_normal(rng, x0.batch(), x0.channels(), x0.height(), x0.width());
    forward_jump(x0, timesteps, schedule, &noise)
}

/// Simplified posterior mean:
/// `mu = (x_t - (1 - alpha_t) / sqrt(1 - ab_t) * eps) / sqrt(alpha_t)`.
pub fn posterior_mean_simplified(
    x_t: &ImageBatch,
    eps: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ImageBatch> {
    schedule.check_timestep(t)?;
    x_t.require_same_shape(eps, "posterior_mean_simplified")?;
    let inv_sqrt_alpha = 1.0 / math::sqrt(schedule.alpha[t]);
    let eps_coeff = (1.0 - schedule.alpha[t]) / math::sqrt(1.0 - schedule.alpha_bar[t]);
    Ok(x_t.zip(eps, |x, e| inv_sqrt_alpha * (x - eps_coeff * e)))
}

/// Posterior mean via explicit clean-image reconstruction: rebuilds
/// `x0 = c1 * x_t - c2 * eps`, optionally clamps it to `[-1, 1]`, and
/// evaluates `mu = pc1 * x0 + pc2 * x_t`.
///
/// With clamping off this is algebraically identical to
/// [`posterior_mean_simplified`].
pub fn posterior_mean_via_x0(
    x_t: &ImageBatch,
    eps: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
    clamp_x0: bool,
) -> Result<ImageBatch> {
    schedule.check_timestep(t)?;
    x_t.require_same_shape(eps, "posterior_mean_via_x0")?;
    let (c1, c2) = schedule.x0_coefficients(t)?;
    let (pc1, pc2) = schedule.posterior_coefficients(t)?;
    Ok(x_t.zip(eps, |x, e| {
        let mut x0 = c1 * x - c2 * e;
        if clamp_x0 {
            x0 = x0.clamp(-1.0, 1.0);
        }
        pc1 * x0 + pc2 * x
    }))
}

fn check_reverse_noise(z: &ImageBatch, t: usize) -> Result<()> {
    if t == 0 && z.as_slice().iter().any(|&v| v != 0.0) {
        return Err(CoreError::InvalidData(
            "the final reverse step (t = 0) must be deterministic; pass zero noise".into(),
        ));
    }
    Ok(())
}

/// One simplified reverse step: simplified posterior mean plus
/// `sqrt(beta_t) * z`, where `sqrt(beta_t)` is exactly the
/// `sqrt(1 - alpha_t)` scale written the other way. `z` must be all
/// zeros at `t = 0`.
pub fn reverse_step_simplified(
    x_t: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
    predicted_noise: &ImageBatch,
    z: &ImageBatch,
) -> Result<ImageBatch> {
    schedule.check_timestep(t)?;
    x_t.require_same_shape(predicted_noise, "reverse_step_simplified")?;
    x_t.require_same_shape(z, "reverse_step_simplified")?;
    check_reverse_noise(z, t)?;
    let mean = posterior_mean_simplified(x_t, predicted_noise, t, schedule)?;
    let sigma = math::sqrt(schedule.beta[t]);
    Ok(mean.zip(z, |m, n| m + sigma * n))
}

/// One posterior-variant reverse step: clamped clean-image reconstruction
/// into the exact posterior mean, plus `exp(0.5 * log beta~_t) * z`.
pub fn reverse_step_posterior(
    x_t: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
    predicted_noise: &ImageBatch,
    z: &ImageBatch,
) -> Result<ImageBatch> {
    reverse_step_posterior_with(x_t, t, schedule, predicted_noise, z, true)
}

/// Same as [`reverse_step_posterior`] with explicit clamp control.
pub fn reverse_step_posterior_with(
    x_t: &ImageBatch,
    t: usize,
    schedule: &NoiseSchedule,
    predicted_noise: &ImageBatch,
    z: &ImageBatch,
    clamp_x0: bool,
) -> Result<ImageBatch> {
    schedule.check_timestep(t)?;
    x_t.require_same_shape(predicted_noise, "reverse_step_posterior")?;
    x_t.require_same_shape(z, "reverse_step_posterior")?;
    check_reverse_noise(z, t)?;
    let mean = posterior_mean_via_x0(x_t, predicted_noise, t, schedule, clamp_x0)?;
    let sigma = math::exp(0.5 * schedule.posterior_log_variance_clipped[t]);
    Ok(mean.zip(z, |m, n| m + sigma * n))
}

/// Settings for [`sample`].
#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub n_images: usize,
    pub n_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Timesteps at which to record the state. Must be non-empty.
    pub save_at: Vec<usize>,
    pub variant: SamplerVariant,
    /// Clean-image clamping in the posterior variant. On by default; the
    /// simplified variant never clamps regardless of this flag.
    pub clamp_x0: bool,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(
        n_images: usize,
        n_channels: usize,
        height: usize,
        width: usize,
        save_at: Vec<usize>,
        variant: SamplerVariant,
        seed: u64,
    ) -> Self {
        SampleConfig {
            n_images,
            n_channels,
            height,
            width,
            save_at,
            variant,
            clamp_x0: true,
            seed,
        }
    }
}

/// Runs the reverse diffusion loop from pure noise down to timestep 0,
/// recording the states requested in `cfg.save_at`.
///
/// When `condition` is present it is concatenated as the leading
/// channel(s) of every predictor input. All randomness (the initial state
/// and each step's injected noise) comes from a single generator seeded
/// with `cfg.seed`, so trajectories are reproducible. No gradient
/// bookkeeping happens anywhere on this path.
pub fn sample(
    predictor: &dyn NoisePredictor,
    condition: Option<&ImageBatch>,
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
) -> Result<TrajectoryRecord> {
    let t_total = schedule.noise_steps();
    if cfg.n_images == 0 || cfg.n_channels == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(CoreError::InvalidConfig(
            "sample() needs n_images, n_channels, height, width all >= 1".into(),
        ));
    }
    if cfg.save_at.is_empty() {
        return Err(CoreError::InvalidConfig(
            "save_at must name at least one timestep".into(),
        ));
    }
    for &t in &cfg.save_at {
        schedule.check_timestep(t)?;
    }

    let condition_channels = match condition {
        Some(c) => {
            if c.batch() != cfg.n_images {
                return Err(CoreError::ShapeMismatch {
                    context: "sample condition",
                    expected: format!("batch {}", cfg.n_images),
                    got: format!("batch {}", c.batch()),
                });
            }
            if c.height() != cfg.height || c.width() != cfg.width {
                return Err(CoreError::ShapeMismatch {
                    context: "sample condition",
                    expected: format!("{}x{} images", cfg.height, cfg.width),
                    got: format!("{}x{}", c.height(), c.width()),
                });
            }
            c.channels()
        }
        None => 0,
    };
    let expected_in = condition_channels + cfg.n_channels;
    if predictor.in_channels() != expected_in {
        return Err(CoreError::ShapeMismatch {
            context: "sample predictor channels",
            expected: format!(
                "predictor with {expected_in} input channels ({condition_channels} condition + {} state)",
                cfg.n_channels
            ),
            got: format!("{}", predictor.in_channels()),
        });
    }
    if predictor.out_channels() != cfg.n_channels {
        return Err(CoreError::ShapeMismatch {
            context: "sample predictor channels",
            expected: format!("{} output channels", cfg.n_channels),
            got: format!("{}", predictor.out_channels()),
        });
    }

    let mut save_at: Vec<usize> = cfg.save_at.clone();
    save_at.sort_unstable();
    save_at.dedup();
    save_at.reverse();

    let mut rng = Rng::seed_from(cfg.seed);
    let mut x = ImageBatch::standard_normal(
        &mut rng,
        cfg.n_images,
        cfg.n_channels,
        cfg.height,
        cfg.width,
    );

    let enc_dim = predictor.time_encoding_dim();
    let mut images = Vec::with_capacity(save_at.len());

    for t in (0..t_total).rev() {
        let timesteps = vec![t; cfg.n_images];
        let t_enc = posenc::encode(&timesteps, enc_dim)?;
        let model_input = match condition {
            Some(c) => ImageBatch::concat_channels(c, &x)?,
            None => x.clone(),
        };
        let predicted = predictor.predict_at(&model_input, &timesteps, &t_enc)?;
        predicted.require_finite("predicted noise")?;
        if predicted.dims() != x.dims() {
            return Err(CoreError::ShapeMismatch {
                context: "sample predictor output",
                expected: x.dims_string(),
                got: predicted.dims_string(),
            });
        }

        let z = if t > 0 {
            ImageBatch::standard_normal(
                &mut rng,
                cfg.n_images,
                cfg.n_channels,
                cfg.height,
                cfg.width,
            )
        } else {
            ImageBatch::zeros(cfg.n_images, cfg.n_channels, cfg.height, cfg.width)
        };

        x = match cfg.variant {
            SamplerVariant::Simplified => {
                reverse_step_simplified(&x, t, schedule, &predicted, &z)?
            }
            SamplerVariant::Posterior => {
                reverse_step_posterior_with(&x, t, schedule, &predicted, &z, cfg.clamp_x0)?
            }
        };

        if save_at.contains(&t) {
            images.push(x.clone());
        }
    }

    Ok(TrajectoryRecord { images, saved_at: save_at })
}
