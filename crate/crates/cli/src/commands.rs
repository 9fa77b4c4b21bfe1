//! The four subcommands: train, eval, sample, and forward-demo.
//!
//! Every command is a pure function of its configuration file, the
//! command-line overrides, and the seed; identical invocations produce
//! identical artifacts. Nothing is written outside the configured output
//! directory, and configuration problems surface before any output
//! exists.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ddpm_core::data::PairedDataset;
use ddpm_core::denoiser::{build_unet, NoisePredictor, UNet};
use ddpm_core::diffusion::{sample, SampleConfig};
use ddpm_core::metrics;
use ddpm_core::rng::Rng;
use ddpm_core::schedule::build_linear_schedule;
use ddpm_core::synthetic::generate_synthetic;
use ddpm_core::trainer::{self, AdamW, EvalSettings, TrainHooks};
use ddpm_core::ImageBatch;

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::dataio;
use crate::export;

/// Flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(common.seed, common.out.clone());
    Ok(cfg)
}

/// Materialises the (train, test) datasets named by the config.
fn load_datasets(cfg: &RunConfig) -> Result<(PairedDataset, PairedDataset)> {
    match &cfg.data {
        DataSource::Synthetic { spec, test_pairs } => {
            let mut spec = *spec;
            spec.seed = cfg.seed;
            let full = generate_synthetic(&spec)?;
            let (train, test) = full.split_tail(*test_pairs)?;
            Ok((train, test))
        }
        DataSource::Directories {
            train_low,
            train_high,
            test_low,
            test_high,
        } => {
            let train_manifest = dataio::scan(train_low, train_high)?;
            let test_manifest = dataio::scan(test_low, test_high)?;
            Ok((train_manifest.load_all()?, test_manifest.load_all()?))
        }
    }
}

fn load_test_dataset(cfg: &RunConfig) -> Result<PairedDataset> {
    Ok(load_datasets(cfg)?.1)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| {
        format!("cannot create output directory {}", cfg.output_dir.display())
    })
}

fn load_matching_checkpoint(cfg: &RunConfig, path: &Path) -> Result<checkpoint::Checkpoint> {
    let ck = checkpoint::load(path)?;
    if let Some(field) = checkpoint::config_mismatch(&ck.config, &cfg.unet) {
        bail!(
            "checkpoint {} disagrees with the configured model on `{field}`",
            path.display()
        );
    }
    Ok(ck)
}

/// Input / generated / target comparison grid over a few test pairs.
fn write_epoch_grid(
    path: &Path,
    model: &UNet,
    cfg: &RunConfig,
    schedule: &ddpm_core::schedule::NoiseSchedule,
    test: &PairedDataset,
    seed: u64,
) -> Result<()> {
    let n = test.len().min(4);
    let idx: Vec<usize> = (0..n).collect();
    let (low, high) = test.select(&idx);
    let sample_cfg = SampleConfig::new(
        n,
        high.channels(),
        low.height(),
        low.width(),
        vec![0],
        cfg.sampler_variant,
        seed,
    );
    let record = sample(model, Some(&low), schedule, &sample_cfg)?;
    let generated = record.final_images().expect("timestep 0 was saved");
    export::write_grid_png(path, n, 3, low.height(), low.width(), |r, c| match c {
        0 => export::plane_to_u8(&low, r, 0),
        1 => export::plane_to_u8(generated, r, 0),
        _ => export::plane_to_u8(&high, r, 0),
    })
}

/// Trains a model, writing one checkpoint per epoch, a best-loss
/// snapshot, a loss CSV, and (optionally) per-epoch comparison grids.
pub fn cmd_train(common: &CommonArgs, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let (train_set, test_set) = load_datasets(&cfg)?;
    let schedule = build_linear_schedule(cfg.schedule)?;

    let (mut model, mut optimizer, start_epoch) = match resume {
        Some(path) => {
            let ck = load_matching_checkpoint(&cfg, path)?;
            let mut opt = AdamW::new(cfg.train.learning_rate);
            opt.restore_state(ck.opt_steps, ck.opt_m, ck.opt_v)?;
            (ck.model, opt, ck.epochs_completed as usize)
        }
        None => (
            build_unet(cfg.unet.clone(), cfg.seed)?,
            AdamW::new(cfg.train.learning_rate),
            0,
        ),
    };
    if start_epoch >= cfg.train.epochs {
        bail!(
            "checkpoint already covers {} epochs; configured run is {} epochs",
            start_epoch,
            cfg.train.epochs
        );
    }

    ensure_out_dir(&cfg)?;
    let csv_path = cfg.output_dir.join("loss.csv");
    if resume.is_none() && csv_path.exists() {
        std::fs::remove_file(&csv_path)
            .with_context(|| format!("cannot reset {}", csv_path.display()))?;
    }

    let eval_settings = cfg.eval_per_epoch.then(|| EvalSettings {
        data: test_set.clone(),
        metrics: cfg.metrics.clone(),
        variant: cfg.sampler_variant,
    });

    let quiet = common.quiet;
    let mut on_batch = |event: trainer::BatchEvent| {
        let stride = (event.num_batches / 10).max(1);
        if !quiet && (event.batch + 1).is_multiple_of(stride) {
            println!(
                "epoch {} batch {}/{}: train loss {:.4}",
                event.epoch + 1,
                event.batch + 1,
                event.num_batches,
                event.loss
            );
        }
    };

    let mut best_loss = f64::INFINITY;
    let out_dir = cfg.output_dir.clone();
    let seed = cfg.seed;
    let grid_cfg = cfg.clone();
    let grid_schedule = schedule.clone();
    let grid_test = test_set;
    let save_grids = cfg.save_epoch_grids;
    let mut on_epoch = |stats: &trainer::EpochStats,
                        model: &UNet,
                        opt: &AdamW|
     -> ddpm_core::Result<()> {
        let mut io = || -> Result<()> {
            let epochs_done = (stats.epoch + 1) as u32;
            checkpoint::save(
                &out_dir.join(format!("epoch_{:04}.ckpt", epochs_done)),
                model,
                opt,
                epochs_done,
            )?;
            if stats.mean_loss < best_loss {
                best_loss = stats.mean_loss;
                checkpoint::save(&out_dir.join("best.ckpt"), model, opt, epochs_done)?;
            }
            export::append_history_row(&out_dir.join("loss.csv"), stats)?;
            if save_grids {
                write_epoch_grid(
                    &out_dir.join(format!("epoch_{:04}_grid.png", epochs_done)),
                    model,
                    &grid_cfg,
                    &grid_schedule,
                    &grid_test,
                    Rng::derive(seed, stats.epoch as u64).next_u64(),
                )?;
            }
            if !quiet {
                println!(
                    "epoch {}/{}: train loss {:.4}, {:.1}s",
                    stats.epoch + 1,
                    grid_cfg.train.epochs,
                    stats.mean_loss,
                    stats.seconds
                );
            }
            Ok(())
        };
        io().map_err(|e| ddpm_core::CoreError::InvalidData(format!("output failure: {e}")))
    };

    trainer::train(
        &cfg.train,
        &mut model,
        &mut optimizer,
        &schedule,
        &train_set,
        eval_settings.as_ref(),
        start_epoch,
        TrainHooks {
            on_batch: Some(&mut on_batch),
            on_epoch: Some(&mut on_epoch),
        },
    )?;
    Ok(())
}

/// Samples trajectories from a checkpoint and writes them as PNG grids.
pub fn cmd_sample(
    common: &CommonArgs,
    checkpoint_path: &Path,
    n_images: usize,
    save_at: &[usize],
) -> Result<()> {
    let cfg = load_config(common)?;
    let ck = load_matching_checkpoint(&cfg, checkpoint_path)?;
    let model = ck.model;
    let schedule = build_linear_schedule(cfg.schedule)?;
    if n_images == 0 {
        bail!("--n-images must be >= 1");
    }
    let save_at = if save_at.is_empty() {
        vec![0]
    } else {
        save_at.to_vec()
    };

    // A model with more inputs than outputs is conditional: feed it test
    // images. Otherwise sample unconditionally on the configured canvas.
    let conditional = model.in_channels() > model.out_channels();
    let (condition, height, width) = if conditional {
        let test = load_test_dataset(&cfg)?;
        if test.len() < n_images {
            bail!(
                "test set has {} pairs but {} samples were requested",
                test.len(),
                n_images
            );
        }
        let idx: Vec<usize> = (0..n_images).collect();
        let (low, _) = test.select(&idx);
        let (h, w) = (low.height(), low.width());
        (Some(low), h, w)
    } else {
        (None, cfg.image_size, cfg.image_size)
    };

    ensure_out_dir(&cfg)?;
    let sample_cfg = SampleConfig::new(
        n_images,
        model.out_channels(),
        height,
        width,
        save_at,
        cfg.sampler_variant,
        cfg.seed,
    );
    let record = sample(&model, condition.as_ref(), &schedule, &sample_cfg)?;

    // Trajectory grid: one row per sample, states left to right from the
    // noisiest saved step down to the cleanest.
    let cols = record.saved_at.len();
    export::write_grid_png(
        &cfg.output_dir.join("trajectories.png"),
        n_images,
        cols,
        height,
        width,
        |r, c| export::plane_to_u8(&record.images[c], r, 0),
    )?;
    if let Some(finals) = record.final_images() {
        export::write_png16_batch(&cfg.output_dir, "sample", finals)?;
    }
    if !common.quiet {
        println!(
            "wrote {} trajectories over timesteps {:?} to {}",
            n_images,
            record.saved_at,
            cfg.output_dir.display()
        );
    }
    Ok(())
}

/// Scores a checkpoint on the test set and writes the metrics CSV plus
/// the generated/target image dumps the report can be recomputed from.
pub fn cmd_eval(common: &CommonArgs, checkpoint_path: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let ck = load_matching_checkpoint(&cfg, checkpoint_path)?;
    let model = ck.model;
    let schedule = build_linear_schedule(cfg.schedule)?;
    let test = load_test_dataset(&cfg)?;
    let batches = trainer::batch_pairs(&test, cfg.train.batch_size);

    let report = metrics::evaluate(
        &model,
        &schedule,
        &batches,
        &cfg.metrics,
        cfg.sampler_variant,
        cfg.seed,
    )?;

    ensure_out_dir(&cfg)?;
    export::write_metrics_csv(&cfg.output_dir.join("metrics.csv"), &report)?;

    // Regenerate the same trajectories (same per-batch seeds as
    // evaluate()) and dump them alongside the targets, so the report can
    // be recomputed offline from the files.
    let mut image_index = 0usize;
    for (batch_idx, (low, high)) in batches.iter().enumerate() {
        let sample_cfg = SampleConfig::new(
            low.batch(),
            high.channels(),
            low.height(),
            low.width(),
            vec![0],
            cfg.sampler_variant,
            cfg.seed.wrapping_add(batch_idx as u64),
        );
        let record = sample(&model, Some(low), &schedule, &sample_cfg)?;
        let generated = record.final_images().expect("timestep 0 was saved");
        for b in 0..low.batch() {
            let one: Vec<usize> = vec![b];
            let gen_one = generated.select_samples(&one);
            let tgt_one = high.select_samples(&one);
            export::write_png16_batch(
                &cfg.output_dir,
                &format!("generated_{image_index:03}"),
                &gen_one,
            )?;
            export::write_png16_batch(
                &cfg.output_dir,
                &format!("target_{image_index:03}"),
                &tgt_one,
            )?;
            image_index += 1;
        }
    }

    println!(
        "ssim {} ms_ssim {} psnr {} mae {} nrmse {} over {} images",
        report.ssim, report.ms_ssim, report.psnr, report.mae, report.nrmse, report.n_images
    );
    Ok(())
}

/// Corrupts one image at the requested timesteps and writes the strip.
pub fn cmd_forward_demo(
    common: &CommonArgs,
    image_path: &Path,
    timesteps: &[usize],
    noise_off: bool,
) -> Result<()> {
    let cfg = load_config(common)?;
    let schedule = build_linear_schedule(cfg.schedule)?;
    if timesteps.is_empty() {
        bail!("--timesteps must name at least one timestep");
    }
    for &t in timesteps {
        if t >= schedule.noise_steps() {
            bail!(
                "timestep {t} is out of range for the configured {} noise steps",
                schedule.noise_steps()
            );
        }
    }

    let x0 = load_image_any(image_path)?;
    ensure_out_dir(&cfg)?;

    let mut rng = Rng::seed_from(cfg.seed);
    let mut frames: Vec<ImageBatch> = Vec::with_capacity(timesteps.len());
    for &t in timesteps {
        let noise = if noise_off {
            ImageBatch::zeros(1, 1, x0.height(), x0.width())
        } else {
            ImageBatch::standard_normal(&mut rng, 1, 1, x0.height(), x0.width())
        };
        let (noisy, _) = ddpm_core::diffusion::forward_jump(&x0, &[t], &schedule, &noise)?;
        frames.push(noisy);
    }

    export::write_grid_png(
        &cfg.output_dir.join("forward_strip.png"),
        1,
        frames.len(),
        x0.height(),
        x0.width(),
        |_, c| export::plane_to_u8(&frames[c], 0, 0),
    )?;
    if !common.quiet {
        println!(
            "wrote {}-frame forward strip to {}",
            frames.len(),
            cfg.output_dir.display()
        );
    }
    Ok(())
}

/// Loads a grayscale image of any supported format onto `[-1, 1]`.
fn load_image_any(path: &Path) -> Result<ImageBatch> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "tif" || ext == "tiff" {
        return Ok(dataio::load_single_image(path)?);
    }
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
