//! Linear variance schedule and every per-timestep constant derived from it.
//!
//! All arrays are precomputed once at 64-bit precision and are immutable
//! afterwards, so a schedule can be shared freely across concurrent
//! readers. Index `t` describes the corruption level after `t + 1`
//! noise applications; index 0 is therefore already one step away from
//! the clean image.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::Result;

/// Floor applied to the posterior variance before taking its logarithm.
pub const POSTERIOR_VARIANCE_FLOOR: f64 = 1e-20;

/// Parameters of the linear variance schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    /// Number of diffusion steps `T`.
    pub noise_steps: usize,
    /// Variance at the first step.
    pub beta_start: f64,
    /// Variance at the last step.
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn new(noise_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let cfg = ScheduleConfig {
            noise_steps,
            beta_start,
            beta_end,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_steps < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "noise_steps must be >= 2, got {}",
                self.noise_steps
            )));
        }
        if !(self.beta_start.is_finite() && self.beta_end.is_finite()) {
            return Err(CoreError::InvalidConfig("beta bounds must be finite".into()));
        }
        if self.beta_start <= 0.0 || self.beta_end >= 1.0 || self.beta_start > self.beta_end {
            return Err(CoreError::InvalidConfig(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got ({}, {})",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            noise_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Precomputed per-timestep constants of the diffusion process.
///
/// `beta[t]` is the per-step variance, `alpha[t] = 1 - beta[t]`, and
/// `alpha_bar[t]` the running product of alphas, the fraction of signal
/// variance surviving after `t + 1` steps. `alpha_bar_prev[0]` is pinned
/// to exactly 1, which forces `posterior_variance[0] = 0`: the final
/// reverse step is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub alpha_bar_prev: Vec<f64>,
    pub posterior_variance: Vec<f64>,
    pub posterior_log_variance_clipped: Vec<f64>,
    pub posterior_mean_coeff1: Vec<f64>,
    pub posterior_mean_coeff2: Vec<f64>,
    pub x0_coeff1: Vec<f64>,
    pub x0_coeff2: Vec<f64>,
}

/// Builds the full constant set for a linear `beta_start -> beta_end`
/// schedule over `noise_steps` points.
pub fn build_linear_schedule(cfg: ScheduleConfig) -> Result<NoiseSchedule> {
    cfg.validate()?;
    let t_total = cfg.noise_steps;

    let mut beta = vec![0.0; t_total];
    let step = (cfg.beta_end - cfg.beta_start) / (t_total - 1) as f64;
    for (i, b) in beta.iter_mut().enumerate() {
        *b = cfg.beta_start + step * i as f64;
    }
    // Pin the endpoints against accumulated rounding.
    beta[0] = cfg.beta_start;
    beta[t_total - 1] = cfg.beta_end;

    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();

    let mut alpha_bar = vec![0.0; t_total];
    let mut product = 1.0;
    for (i, a) in alpha.iter().enumerate() {
        product *= a;
        alpha_bar[i] = product;
    }

    let mut alpha_bar_prev = vec![0.0; t_total];
    alpha_bar_prev[0] = 1.0;
    alpha_bar_prev[1..].copy_from_slice(&alpha_bar[..t_total - 1]);

    let mut posterior_variance = vec![0.0; t_total];
    let mut posterior_log_variance_clipped = vec![0.0; t_total];
    let mut posterior_mean_coeff1 = vec![0.0; t_total];
    let mut posterior_mean_coeff2 = vec![0.0; t_total];
    let mut x0_coeff1 = vec![0.0; t_total];
    let mut x0_coeff2 = vec![0.0; t_total];

    for t in 0..t_total {
        let one_minus_bar = 1.0 - alpha_bar[t];
        posterior_variance[t] = beta[t] * (1.0 - alpha_bar_prev[t]) / one_minus_bar;
        posterior_log_variance_clipped[t] =
            math::ln(posterior_variance[t].max(POSTERIOR_VARIANCE_FLOOR));
        posterior_mean_coeff1[t] = math::sqrt(alpha_bar_prev[t]) * beta[t] / one_minus_bar;
        posterior_mean_coeff2[t] =
            math::sqrt(alpha[t]) * (1.0 - alpha_bar_prev[t]) / one_minus_bar;
        x0_coeff1[t] = math::sqrt(1.0 / alpha_bar[t]);
        x0_coeff2[t] = math::sqrt(1.0 / alpha_bar[t] - 1.0);
    }

    Ok(NoiseSchedule {
        config: cfg,
        beta,
        alpha,
        alpha_bar,
        alpha_bar_prev,
        posterior_variance,
        posterior_log_variance_clipped,
        posterior_mean_coeff1,
        posterior_mean_coeff2,
        x0_coeff1,
        x0_coeff2,
    })
}

impl NoiseSchedule {
    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// Number of diffusion steps `T`.
    pub fn noise_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t < self.noise_steps() {
            Ok(())
        } else {
            Err(CoreError::TimestepOutOfRange {
                t,
                noise_steps: self.noise_steps(),
            })
        }
    }

    /// Weights of the reconstructed clean image and of the current state
    /// in the posterior mean: `mu = c1 * x0 + c2 * x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_timestep(t)?;
        Ok((self.posterior_mean_coeff1[t], self.posterior_mean_coeff2[t]))
    }

    /// Scalars reconstructing the clean image from a noisy state and its
    /// noise: `x0 = c1 * x_t - c2 * eps`.
    pub fn x0_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_timestep(t)?;
        Ok((self.x0_coeff1[t], self.x0_coeff2[t]))
    }
}
