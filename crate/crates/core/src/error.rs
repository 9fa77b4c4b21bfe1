//! Error type shared by all engine modules.

use alloc::string::String;
use core::fmt;

/// Errors raised at module boundaries: invalid configuration, shape
/// mismatches, out-of-range timesteps, and non-finite data.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A configuration value violates its documented invariants.
    InvalidConfig(String),
    /// Two arrays that must agree in shape do not.
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    /// A timestep index is outside `[0, noise_steps)`.
    TimestepOutOfRange { t: usize, noise_steps: usize },
    /// NaN or infinity encountered where finite values are required.
    NonFinite(&'static str),
    /// Input data fails a documented precondition.
    InvalidData(String),
    /// Training aborted; carries the epoch/batch position of the failure.
    TrainingAborted {
        epoch: usize,
        batch: usize,
        reason: String,
    },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "shape mismatch in {context}: expected {expected}, got {got}"),
            CoreError::TimestepOutOfRange { t, noise_steps } => {
                write!(f, "timestep {t} out of range for schedule with {noise_steps} steps")
            }
            CoreError::NonFinite(context) => {
                write!(f, "non-finite value (NaN or infinity) in {context}")
            }
            CoreError::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            CoreError::TrainingAborted {
                epoch,
                batch,
                reason,
            } => write!(f, "training aborted at epoch {epoch}, batch {batch}: {reason}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
