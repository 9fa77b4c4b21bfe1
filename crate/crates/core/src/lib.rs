//! Denoising-diffusion engine for paired image-to-image translation.
//!
//! The crate is organised around a precomputed [`schedule::NoiseSchedule`],
//! stateless forward/reverse processes in [`diffusion`], a noise-predictor
//! contract in [`denoiser`] (a small attention U-Net plus a closed-form
//! Gaussian oracle used for correctness tests), a training loop in
//! [`trainer`], and full-reference image-quality metrics in [`metrics`].
//!
//! Everything here is pure computation over `f64` arrays; file formats,
//! dataset ingestion, and the command-line front end live in the companion
//! `ddpm-cli` crate. The crate is `no_std`-compatible (`alloc` required);
//! the default `std` feature only adds wall-clock timing to the trainer.

#![no_std]

extern crate alloc;

#[cfg(any(feature = "std", test))]
extern crate std;

pub mod batch;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
mod math;
pub mod metrics;
pub mod posenc;
pub mod rng;
pub mod schedule;
pub mod synthetic;
pub mod trainer;

pub use batch::ImageBatch;
pub use error::CoreError;

/// Convenience alias used across the crate.
pub type Result<T> = core::result::Result<T, CoreError>;
