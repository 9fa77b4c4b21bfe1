//! Sinusoidal position encodings for integer timesteps.
//!
//! Each timestep maps to a fixed-length vector whose first half holds
//! `sin(t * inv_freq_k)` and second half `cos(t * inv_freq_k)`, with
//! `inv_freq_k = 10000^(-2k / enc_dim)`. Frequencies are computed at
//! 64-bit precision.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::Result;

/// Batch of sinusoidal encodings, one row of `enc_dim` values per
/// timestep. Every entry lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    values: Vec<f64>,
    batch: usize,
    enc_dim: usize,
}

impl TimeEncoding {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_dim
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.enc_dim..(b + 1) * self.enc_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Encodes a batch of timesteps into `enc_dim`-dimensional vectors.
pub fn encode(timesteps: &[usize], enc_dim: usize) -> Result<TimeEncoding> {
    if enc_dim < 2 || !enc_dim.is_multiple_of(2) {
        return Err(CoreError::InvalidConfig(format!(
            "encoding dimension must be even and >= 2, got {enc_dim}"
        )));
    }
    if timesteps.is_empty() {
        return Err(CoreError::InvalidData("empty timestep batch".into()));
    }
    let half = enc_dim / 2;
    let mut inv_freq = vec![0.0; half];
    for (k, f) in inv_freq.iter_mut().enumerate() {
        *f = math::powf(10000.0, -((2 * k) as f64) / enc_dim as f64);
    }

    let mut values = vec![0.0; timesteps.len() * enc_dim];
    for (b, &t) in timesteps.iter().enumerate() {
        let row = &mut values[b * enc_dim..(b + 1) * enc_dim];
        let t = t as f64;
        for k in 0..half {
            row[k] = math::sin(t * inv_freq[k]);
            row[half + k] = math::cos(t * inv_freq[k]);
        }
    }

    Ok(TimeEncoding {
        values,
        batch: timesteps.len(),
        enc_dim,
    })
}
