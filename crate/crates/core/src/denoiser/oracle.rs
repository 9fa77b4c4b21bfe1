//! Closed-form noise predictor for per-pixel Gaussian data.
//!
//! When every pixel of the clean image is drawn independently from
//! `Normal(m, s^2)`, the pair `(eps, x_t)` under the fast-forward
//! corruption is jointly Gaussian, and the conditional expectation of
//! the noise given the observed state has the closed form
//!
//! ```text
//! E[eps | x_t] = sqrt(1 - ab_t) * (x_t - sqrt(ab_t) * m) / (ab_t * s^2 + 1 - ab_t)
//! ```
//!
//! with `ab_t` the cumulative signal fraction. This is the Bayes-optimal
//! predictor for that data, which makes it the reference point for
//! end-to-end sampler tests and a loss floor no trained network can beat.

use alloc::format;

use super::{check_predict_input, NoisePredictor};
use crate::batch::ImageBatch;
use crate::error::CoreError;
use crate::math;
use crate::posenc::TimeEncoding;
use crate::schedule::NoiseSchedule;
use crate::Result;

/// Parameters of the per-pixel Gaussian data distribution the oracle
/// assumes, plus the schedule it operates under.
#[derive(Debug, Clone)]
pub struct GaussianOracleParams {
    pub mean: f64,
    pub std: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianOracleParams {
    pub fn new(mean: f64, std: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) || !mean.is_finite() {
            return Err(CoreError::InvalidConfig(format!(
                "oracle requires finite mean and std > 0, got ({mean}, {std})"
            )));
        }
        Ok(GaussianOracleParams {
            mean,
            std,
            schedule,
        })
    }
}

/// Noise predictor that evaluates the conditional-Gaussian formula.
///
/// It must be driven through [`NoisePredictor::predict_at`]; the raw
/// timestep cannot be recovered from the sinusoidal encoding alone.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianPredictor {
    params: GaussianOracleParams,
    enc_dim: usize,
}

/// Builds the oracle predictor. `enc_dim` only states which encoding
/// width the sampler should produce; the oracle itself never reads it.
pub fn analytic_gaussian_predictor(
    params: GaussianOracleParams,
    enc_dim: usize,
) -> AnalyticGaussianPredictor {
    AnalyticGaussianPredictor { params, enc_dim }
}

impl AnalyticGaussianPredictor {
    pub fn new(params: GaussianOracleParams, enc_dim: usize) -> Self {
        analytic_gaussian_predictor(params, enc_dim)
    }

    /// Conditional-expectation estimate for one sample at timestep `t`.
    fn predict_sample(&self, x: &[f64], out: &mut [f64], t: usize) {
        let ab = self.params.schedule.alpha_bar[t];
        let m = self.params.mean;
        let s2 = self.params.std * self.params.std;
        let num = math::sqrt(1.0 - ab);
        let den = ab * s2 + (1.0 - ab);
        let center = math::sqrt(ab) * m;
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = num * (v - center) / den;
        }
    }
}

impl NoisePredictor for AnalyticGaussianPredictor {
    fn in_channels(&self) -> usize {
        1
    }

    fn out_channels(&self) -> usize {
        1
    }

    fn time_encoding_dim(&self) -> usize {
        self.enc_dim
    }

    fn predict(&self, _x: &ImageBatch, _t_enc: &TimeEncoding) -> Result<ImageBatch> {
        Err(CoreError::InvalidData(
            "the analytic Gaussian predictor needs raw timesteps; drive it through predict_at"
                .into(),
        ))
    }

    fn predict_at(
        &self,
        x: &ImageBatch,
        timesteps: &[usize],
        t_enc: &TimeEncoding,
    ) -> Result<ImageBatch> {
        check_predict_input(x, t_enc, self.in_channels(), self.enc_dim)?;
        if timesteps.len() != x.batch() {
            return Err(CoreError::ShapeMismatch {
                context: "AnalyticGaussianPredictor::predict_at",
                expected: format!("{} timesteps", x.batch()),
                got: format!("{}", timesteps.len()),
            });
        }
        let mut out = ImageBatch::zeros(x.batch(), 1, x.height(), x.width());
        for (b, &t) in timesteps.iter().enumerate() {
            self.params.schedule.check_timestep(t)?;
            let src = x.sample(b).to_vec();
            self.predict_sample(&src, out.sample_mut(b), t);
        }
        Ok(out)
    }
}
