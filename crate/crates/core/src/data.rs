//! In-memory paired dataset: aligned low-resolution inputs and
//! high-resolution targets.

use alloc::format;
use alloc::vec::Vec;

use crate::batch::ImageBatch;
use crate::error::CoreError;
use crate::Result;

/// Aligned (input, target) image pairs stored as two batches whose batch
/// axes correspond element-for-element.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub low: ImageBatch,
    pub high: ImageBatch,
}

impl PairedDataset {
    pub fn new(low: ImageBatch, high: ImageBatch) -> Result<Self> {
        if low.dims() != high.dims() {
            return Err(CoreError::ShapeMismatch {
                context: "PairedDataset",
                expected: low.dims_string(),
                got: high.dims_string(),
            });
        }
        Ok(PairedDataset { low, high })
    }

    pub fn len(&self) -> usize {
        self.low.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers the listed pairs into new batches, preserving order.
    pub fn select(&self, indices: &[usize]) -> (ImageBatch, ImageBatch) {
        (
            self.low.select_samples(indices),
            self.high.select_samples(indices),
        )
    }

    /// Splits off the last `n` pairs as a held-out set.
    pub fn split_tail(&self, n: usize) -> Result<(PairedDataset, PairedDataset)> {
        if n == 0 || n >= self.len() {
            return Err(CoreError::InvalidData(format!(
                "cannot split {n} pairs off a dataset of {}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..self.len() - n).collect();
        let tail: Vec<usize> = (self.len() - n..self.len()).collect();
        let (hl, hh) = self.select(&head);
        let (tl, th) = self.select(&tail);
        Ok((
            PairedDataset { low: hl, high: hh },
            PairedDataset { low: tl, high: th },
        ))
    }
}
