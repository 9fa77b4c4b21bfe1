//! Noise-predictor contract and its two implementations: a trainable
//! attention U-Net and a closed-form Gaussian-data oracle used as a test
//! double.

mod layers;
mod oracle;
mod unet;

pub use oracle::{analytic_gaussian_predictor, AnalyticGaussianPredictor, GaussianOracleParams};
pub use unet::{build_unet, UNet, UNetConfig};

#[cfg(test)]
pub(crate) fn analytic_gaussian_predictor_for_tests(
    mean: f64,
    std: f64,
    schedule: crate::schedule::NoiseSchedule,
) -> AnalyticGaussianPredictor {
    analytic_gaussian_predictor(GaussianOracleParams::new(mean, std, schedule).unwrap(), 8)
}

use alloc::format;

use crate::batch::ImageBatch;
use crate::error::CoreError;
use crate::posenc::TimeEncoding;
use crate::Result;

/// Predicts the noise present in a batch of noisy images.
///
/// Implementations must preserve spatial dimensions and emit
/// `out_channels` channels. Inference is read-only; predictors are safe
/// to share across concurrent callers.
pub trait NoisePredictor {
    fn in_channels(&self) -> usize;

    fn out_channels(&self) -> usize;

    /// Dimension of the time encoding the predictor expects.
    fn time_encoding_dim(&self) -> usize;

    /// Estimates the noise in `x` given the encoded timestep.
    fn predict(&self, x: &ImageBatch, t_enc: &TimeEncoding) -> Result<ImageBatch>;

    /// Variant invoked by the sampler, which also has the raw timesteps
    /// at hand. The default ignores them; the analytic oracle uses this
    /// side channel instead of inverting the sinusoidal encoding.
    fn predict_at(
        &self,
        x: &ImageBatch,
        timesteps: &[usize],
        t_enc: &TimeEncoding,
    ) -> Result<ImageBatch> {
        let _ = timesteps;
        self.predict(x, t_enc)
    }
}

/// Shared entry check for predictor implementations.
pub(crate) fn check_predict_input(
    x: &ImageBatch,
    t_enc: &TimeEncoding,
    in_channels: usize,
    enc_dim: usize,
) -> Result<()> {
    if x.channels() != in_channels {
        return Err(CoreError::ShapeMismatch {
            context: "NoisePredictor::predict",
            expected: format!("{in_channels} input channels"),
            got: format!("{}", x.channels()),
        });
    }
    if t_enc.batch() != x.batch() {
        return Err(CoreError::ShapeMismatch {
            context: "NoisePredictor::predict",
            expected: format!("time encoding batch {}", x.batch()),
            got: format!("{}", t_enc.batch()),
        });
    }
    if t_enc.enc_dim() != enc_dim {
        return Err(CoreError::ShapeMismatch {
            context: "NoisePredictor::predict",
            expected: format!("encoding dimension {enc_dim}"),
            got: format!("{}", t_enc.enc_dim()),
        });
    }
    Ok(())
}
