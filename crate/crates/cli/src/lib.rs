//! File formats, dataset ingestion, and the command-line front end for
//! the `ddpm-core` engine.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataio;
pub mod export;
