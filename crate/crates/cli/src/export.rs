//! Image and CSV outputs.
//!
//! Engine images live in `[-1, 1]`; export clamps into that range first
//! and then maps linearly onto the full unsigned bit range. Grids are
//! 8-bit PNGs with one row per sample; evaluation dumps use 16-bit PNGs
//! so that metrics recomputed from the files stay close to the in-memory
//! values.

use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, ImageBuffer, Luma};

use ddpm_core::metrics::MetricsReport;
use ddpm_core::trainer::EpochStats;
use ddpm_core::ImageBatch;

fn to_unit(v: f64) -> f64 {
    (v.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// One channel plane as 8-bit gray pixels.
pub fn plane_to_u8(batch: &ImageBatch, b: usize, c: usize) -> Vec<u8> {
    batch
        .plane(b, c)
        .iter()
        .map(|&v| (to_unit(v) * 255.0).round() as u8)
        .collect()
}

fn plane_to_u16(batch: &ImageBatch, b: usize, c: usize) -> Vec<u16> {
    batch
        .plane(b, c)
        .iter()
        .map(|&v| (to_unit(v) * 65535.0).round() as u16)
        .collect()
}

/// Reads one 16-bit grayscale PNG back onto `[-1, 1]`.
pub fn load_png16(path: &Path) -> Result<ImageBatch> {
    let img = image::open(path)
        .with_context(|| format!("cannot read image {}", path.display()))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img
        .into_raw()
        .into_iter()
        .map(|v| (v as f64 / 65535.0 - 0.5) / 0.5)
        .collect();
    Ok(ImageBatch::new(data, 1, 1, h as usize, w as usize)?)
}

/// Writes single images of a batch as one 16-bit PNG per sample, named
/// `prefix_NNN.png`. Returns the file names written.
pub fn write_png16_batch(dir: &Path, prefix: &str, batch: &ImageBatch) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for b in 0..batch.batch() {
        let name = format!("{prefix}_{b:03}.png");
        let pixels = plane_to_u16(batch, b, 0);
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            batch.width() as u32,
            batch.height() as u32,
            pixels,
        )
        .expect("plane size matches dimensions");
        img.save(dir.join(&name))
            .with_context(|| format!("cannot write {name}"))?;
        names.push(name);
    }
    Ok(names)
}

/// Assembles a grid of 8-bit tiles (rows x cols) with 2-pixel separators
/// and writes it as one PNG. `tile(row, col)` returns the plane to draw.
pub fn write_grid_png(
    path: &Path,
    rows: usize,
    cols: usize,
    tile_h: usize,
    tile_w: usize,
    tile: impl Fn(usize, usize) -> Vec<u8>,
) -> Result<()> {
    const GAP: usize = 2;
    let grid_w = cols * tile_w + (cols - 1) * GAP;
    let grid_h = rows * tile_h + (rows - 1) * GAP;
    let mut canvas = vec![0u8; grid_w * grid_h];
    for r in 0..rows {
        for c in 0..cols {
            let pixels = tile(r, c);
            let oy = r * (tile_h + GAP);
            let ox = c * (tile_w + GAP);
            for y in 0..tile_h {
                let dst = (oy + y) * grid_w + ox;
                canvas[dst..dst + tile_w]
                    .copy_from_slice(&pixels[y * tile_w..(y + 1) * tile_w]);
            }
        }
    }
    let img = GrayImage::from_raw(grid_w as u32, grid_h as u32, canvas)
        .expect("canvas size matches dimensions");
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Appends one per-epoch row to the training-history CSV, writing the
/// header first when the file does not exist yet.
pub fn append_history_row(path: &Path, stats: &EpochStats) -> Result<()> {
    let exists = path.exists();
    let mut text = String::new();
    if !exists {
        text.push_str(match stats.metrics {
            Some(_) => "epoch,mean_loss,seconds,ssim,ms_ssim,psnr,mae,nrmse\n",
            None => "epoch,mean_loss,seconds\n",
        });
    }
    match &stats.metrics {
        Some(m) => text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            stats.epoch,
            stats.mean_loss,
            stats.seconds,
            format_metric(m.ssim),
            format_metric(m.ms_ssim),
            format_metric(m.psnr),
            format_metric(m.mae),
            format_metric(m.nrmse),
        )),
        None => text.push_str(&format!(
            "{},{},{}\n",
            stats.epoch, stats.mean_loss, stats.seconds
        )),
    }
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    file.write_all(text.as_bytes())
        .with_context(|| format!("cannot append to {}", path.display()))?;
    Ok(())
}

/// Writes a metrics report as a one-row CSV.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = format!(
        "ssim,ms_ssim,psnr,mae,nrmse,n_images\n{},{},{},{},{},{}\n",
        format_metric(report.ssim),
        format_metric(report.ms_ssim),
        format_metric(report.psnr),
        format_metric(report.mae),
        format_metric(report.nrmse),
        report.n_images,
    );
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
