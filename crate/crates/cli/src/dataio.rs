//! Paired TIFF dataset ingestion.
//!
//! Directory contract: low-resolution and high-resolution images share
//! filenames across two directories. Grayscale 8- and 16-bit TIFFs are
//! accepted; the bit depth is auto-detected per file and pixel values are
//! normalised onto `[-1, 1]` via `(p / peak - 0.5) / 0.5`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::ColorType;

use ddpm_core::data::PairedDataset;
use ddpm_core::ImageBatch;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot list directory {path}: {source}")]
    ListDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no shared .tif filenames between {low} and {high}")]
    EmptyIntersection { low: PathBuf, high: PathBuf },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{path}: expected {expected}, got {got}")]
    Inconsistent {
        path: PathBuf,
        expected: String,
        got: String,
    },
    #[error("pair index {index} out of range for {len} pairs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Engine(#[from] ddpm_core::CoreError),
}

/// Validated catalogue of a paired-image directory set.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub low_res_dir: PathBuf,
    pub high_res_dir: PathBuf,
    /// Shared TIFF names, bytewise lexicographic.
    pub filenames: Vec<String>,
    /// (height, width) common to every image.
    pub image_size: (usize, usize),
    pub channels: usize,
}

fn list_tiff_names(dir: &Path) -> Result<Vec<String>, DataError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DataError::ListDir {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DataError::ListDir {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".tif") || name.ends_with(".tiff") {
            names.push(name);
        }
    }
    names.sort_unstable();
    Ok(names)
}

struct GrayImage {
    pixels: Vec<f64>,
    height: usize,
    width: usize,
}

fn decode_gray_tiff(path: &Path) -> Result<GrayImage, DataError> {
    let file = File::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = decoder.dimensions().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let color = decoder.colortype().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let peak = match color {
        ColorType::Gray(8) => 255.0,
        ColorType::Gray(16) => 65535.0,
        other => {
            return Err(DataError::Decode {
                path: path.to_path_buf(),
                reason: format!("unsupported color type {other:?}; expected 8/16-bit grayscale"),
            })
        }
    };
    let image = decoder.read_image().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let normalise = |v: f64| (v / peak - 0.5) / 0.5;
    let pixels: Vec<f64> = match image {
        DecodingResult::U8(data) => data.into_iter().map(|v| normalise(v as f64)).collect(),
        DecodingResult::U16(data) => data.into_iter().map(|v| normalise(v as f64)).collect(),
        _ => {
            return Err(DataError::Decode {
                path: path.to_path_buf(),
                reason: "unsupported sample format".into(),
            })
        }
    };
    if pixels.len() != (w as usize) * (h as usize) {
        return Err(DataError::Decode {
            path: path.to_path_buf(),
            reason: format!(
                "pixel count {} does not match {}x{} single-plane grayscale",
                pixels.len(),
                h,
                w
            ),
        });
    }
    Ok(GrayImage {
        pixels,
        height: h as usize,
        width: w as usize,
    })
}

fn read_dims(path: &Path) -> Result<(usize, usize), DataError> {
    let file = File::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = decoder.dimensions().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((h as usize, w as usize))
}

/// Catalogues the shared TIFF names of two directories, verifying every
/// file opens and all dimensions agree.
pub fn scan(low_res_dir: &Path, high_res_dir: &Path) -> Result<DatasetManifest, DataError> {
    let low_names = list_tiff_names(low_res_dir)?;
    let high_names = list_tiff_names(high_res_dir)?;
    let high_set: std::collections::BTreeSet<&str> =
        high_names.iter().map(|s| s.as_str()).collect();
    let filenames: Vec<String> = low_names
        .into_iter()
        .filter(|n| high_set.contains(n.as_str()))
        .collect();
    if filenames.is_empty() {
        return Err(DataError::EmptyIntersection {
            low: low_res_dir.to_path_buf(),
            high: high_res_dir.to_path_buf(),
        });
    }

    let mut image_size = None;
    for name in &filenames {
        for dir in [low_res_dir, high_res_dir] {
            let path = dir.join(name);
            let dims = read_dims(&path)?;
            match image_size {
                None => image_size = Some(dims),
                Some(expected) if expected != dims => {
                    return Err(DataError::Inconsistent {
                        path,
                        expected: format!("{}x{}", expected.0, expected.1),
                        got: format!("{}x{}", dims.0, dims.1),
                    })
                }
                _ => {}
            }
        }
    }

    Ok(DatasetManifest {
        low_res_dir: low_res_dir.to_path_buf(),
        high_res_dir: high_res_dir.to_path_buf(),
        filenames,
        image_size: image_size.expect("nonempty manifest"),
        channels: 1,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.filenames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filenames.is_empty()
    }

    /// Loads and normalises one pair as two single-image batches.
    pub fn load_pair(&self, index: usize) -> Result<(ImageBatch, ImageBatch), DataError> {
        if index >= self.len() {
            return Err(DataError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let name = &self.filenames[index];
        let low = decode_gray_tiff(&self.low_res_dir.join(name))?;
        let high = decode_gray_tiff(&self.high_res_dir.join(name))?;
        for (img, path) in [
            (&low, self.low_res_dir.join(name)),
            (&high, self.high_res_dir.join(name)),
        ] {
            if (img.height, img.width) != self.image_size {
                return Err(DataError::Inconsistent {
                    path,
                    expected: format!("{}x{}", self.image_size.0, self.image_size.1),
                    got: format!("{}x{}", img.height, img.width),
                });
            }
        }
        let low = ImageBatch::new(low.pixels, 1, 1, self.image_size.0, self.image_size.1)?;
        let high = ImageBatch::new(high.pixels, 1, 1, self.image_size.0, self.image_size.1)?;
        Ok((low, high))
    }

    /// Loads every pair into one in-memory dataset.
    pub fn load_all(&self) -> Result<PairedDataset, DataError> {
        self.load_range(0, self.len())
    }

    /// Loads pairs `[start, end)` into one in-memory dataset.
    pub fn load_range(&self, start: usize, end: usize) -> Result<PairedDataset, DataError> {
        assert!(start < end && end <= self.len());
        let (h, w) = self.image_size;
        let n = end - start;
        let mut low_all = ImageBatch::zeros(n, 1, h, w);
        let mut high_all = ImageBatch::zeros(n, 1, h, w);
        for (slot, index) in (start..end).enumerate() {
            let (low, high) = self.load_pair(index)?;
            low_all.sample_mut(slot).copy_from_slice(low.as_slice());
            high_all.sample_mut(slot).copy_from_slice(high.as_slice());
        }
        Ok(PairedDataset::new(low_all, high_all)?)
    }
}

/// Decodes a single grayscale TIFF into a normalised one-image batch.
pub fn load_single_image(path: &Path) -> Result<ImageBatch, DataError> {
    let img = decode_gray_tiff(path)?;
    Ok(ImageBatch::new(img.pixels, 1, 1, img.height, img.width)?)
}
