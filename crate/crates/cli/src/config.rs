//! Run configuration: a TOML file with one table per engine subsystem.
//!
//! Every key mirrors an engine field name and every field has a default
//! except the dataset location. Unknown keys are rejected outright.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ddpm_core::denoiser::UNetConfig;
use ddpm_core::diffusion::SamplerVariant;
use ddpm_core::metrics::MetricsConfig;
use ddpm_core::schedule::ScheduleConfig;
use ddpm_core::synthetic::SyntheticSpec;
use ddpm_core::trainer::{LossKind, TrainConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    #[serde(default = "default_noise_steps")]
    noise_steps: usize,
    #[serde(default = "default_beta_start")]
    beta_start: f64,
    #[serde(default = "default_beta_end")]
    beta_end: f64,
}

fn default_noise_steps() -> usize {
    2000
}
fn default_beta_start() -> f64 {
    1e-6
}
fn default_beta_end() -> f64 {
    0.01
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            noise_steps: default_noise_steps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default = "default_batch_size")]
    batch_size: usize,
    #[serde(default = "default_learning_rate")]
    learning_rate: f64,
    #[serde(default = "default_loss_kind")]
    loss_kind: String,
}

fn default_epochs() -> usize {
    60
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_loss_kind() -> String {
    "squared-error".into()
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            loss_kind: default_loss_kind(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UNetSection {
    #[serde(default = "default_in_channels")]
    in_channels: usize,
    #[serde(default = "default_out_channels")]
    out_channels: usize,
    #[serde(default = "default_encoder_channels")]
    encoder_channels: Vec<usize>,
    #[serde(default = "default_bottleneck_channels")]
    bottleneck_channels: Vec<usize>,
    #[serde(default)]
    attention_flags: Option<Vec<bool>>,
    #[serde(default = "default_time_embedding_dim")]
    time_embedding_dim: usize,
}

fn default_in_channels() -> usize {
    2
}
fn default_out_channels() -> usize {
    1
}
fn default_encoder_channels() -> Vec<usize> {
    vec![32, 64, 128]
}
fn default_bottleneck_channels() -> Vec<usize> {
    vec![256, 256]
}
fn default_time_embedding_dim() -> usize {
    256
}

impl Default for UNetSection {
    fn default() -> Self {
        UNetSection {
            in_channels: default_in_channels(),
            out_channels: default_out_channels(),
            encoder_channels: default_encoder_channels(),
            bottleneck_channels: default_bottleneck_channels(),
            attention_flags: None,
            time_embedding_dim: default_time_embedding_dim(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    #[serde(default = "default_data_range")]
    data_range: f64,
    #[serde(default = "default_ssim_kernel")]
    ssim_kernel: usize,
    #[serde(default = "default_ms_ssim_weights")]
    ms_ssim_weights: Vec<f64>,
}

fn default_data_range() -> f64 {
    2.0
}
fn default_ssim_kernel() -> usize {
    7
}
fn default_ms_ssim_weights() -> Vec<f64> {
    vec![0.0448, 0.2856, 0.3001]
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            data_range: default_data_range(),
            ssim_kernel: default_ssim_kernel(),
            ms_ssim_weights: default_ms_ssim_weights(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    #[serde(default = "default_n_pairs")]
    n_pairs: usize,
    #[serde(default = "default_image_size")]
    image_size: usize,
    #[serde(default = "default_blobs")]
    blobs_per_image: usize,
    #[serde(default = "default_blur")]
    blur_radius: f64,
    /// Pairs held out of training as the test split.
    #[serde(default = "default_test_pairs")]
    test_pairs: usize,
}

fn default_n_pairs() -> usize {
    64
}
fn default_image_size() -> usize {
    16
}
fn default_blobs() -> usize {
    3
}
fn default_blur() -> f64 {
    1.5
}
fn default_test_pairs() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DataSection {
    /// BioSR-style root: `<root>/training_wf`, `<root>/training_gt`,
    /// `<root>/test_wf/<noise_level>`, `<root>/test_gt`.
    root: Option<PathBuf>,
    #[serde(default = "default_noise_level")]
    noise_level: String,
    /// Explicit directories, overriding `root`.
    train_low_dir: Option<PathBuf>,
    train_high_dir: Option<PathBuf>,
    test_low_dir: Option<PathBuf>,
    test_high_dir: Option<PathBuf>,
    synthetic: Option<SyntheticSection>,
}

fn default_noise_level() -> String {
    "level_09".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default = "default_sampler_variant")]
    sampler_variant: String,
    #[serde(default)]
    seed: u64,
    /// Canvas size for unconditional sampling.
    #[serde(default = "default_run_image_size")]
    image_size: usize,
    #[serde(default)]
    save_epoch_grids: bool,
    #[serde(default)]
    eval_per_epoch: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_sampler_variant() -> String {
    "simplified".into()
}
fn default_run_image_size() -> usize {
    128
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: default_output_dir(),
            sampler_variant: default_sampler_variant(),
            seed: 0,
            image_size: default_run_image_size(),
            save_epoch_grids: false,
            eval_per_epoch: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    schedule: ScheduleSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    unet: UNetSection,
    #[serde(default)]
    metrics: MetricsSection,
    data: DataSection,
    #[serde(default)]
    run: RunSection,
}

/// Where the datasets come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Directories {
        train_low: PathBuf,
        train_high: PathBuf,
        test_low: PathBuf,
        test_high: PathBuf,
    },
    Synthetic {
        spec: SyntheticSpec,
        test_pairs: usize,
    },
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub unet: UNetConfig,
    pub metrics: MetricsConfig,
    pub data: DataSource,
    pub output_dir: PathBuf,
    pub sampler_variant: SamplerVariant,
    pub seed: u64,
    pub image_size: usize,
    pub save_epoch_grids: bool,
    pub eval_per_epoch: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let raw: RawConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        RunConfig::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<RunConfig> {
        let schedule = ScheduleConfig::new(
            raw.schedule.noise_steps,
            raw.schedule.beta_start,
            raw.schedule.beta_end,
        )?;

        let loss_kind = match raw.train.loss_kind.as_str() {
            "squared-error" => LossKind::SquaredError,
            "absolute-error" => LossKind::AbsoluteError,
            other => bail!("unknown loss_kind {other:?}; use \"squared-error\" or \"absolute-error\""),
        };
        let sampler_variant = match raw.run.sampler_variant.as_str() {
            "simplified" => SamplerVariant::Simplified,
            "posterior" => SamplerVariant::Posterior,
            other => bail!("unknown sampler_variant {other:?}; use \"simplified\" or \"posterior\""),
        };

        let train = TrainConfig {
            epochs: raw.train.epochs,
            batch_size: raw.train.batch_size,
            learning_rate: raw.train.learning_rate,
            loss_kind,
            noise_steps: schedule.noise_steps,
            beta_start: schedule.beta_start,
            beta_end: schedule.beta_end,
            seed: raw.run.seed,
        };
        train.validate()?;

        let attention_flags = raw
            .unet
            .attention_flags
            .unwrap_or_else(|| vec![false; raw.unet.encoder_channels.len()]);
        let unet = UNetConfig {
            in_channels: raw.unet.in_channels,
            out_channels: raw.unet.out_channels,
            encoder_channels: raw.unet.encoder_channels,
            bottleneck_channels: raw.unet.bottleneck_channels,
            attention_flags,
            time_embedding_dim: raw.unet.time_embedding_dim,
        };
        unet.validate()?;

        let metrics = MetricsConfig {
            data_range: raw.metrics.data_range,
            ssim_kernel: raw.metrics.ssim_kernel,
            ms_ssim_weights: raw.metrics.ms_ssim_weights,
        };
        metrics.validate()?;

        let data = resolve_data(&raw.data)?;

        Ok(RunConfig {
            schedule,
            train,
            unet,
            metrics,
            data,
            output_dir: raw.run.output_dir,
            sampler_variant,
            seed: raw.run.seed,
            image_size: raw.run.image_size,
            save_epoch_grids: raw.run.save_epoch_grids,
            eval_per_epoch: raw.run.eval_per_epoch,
        })
    }

    /// Command-line overrides applied after loading.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(seed) = seed {
            self.seed = seed;
            self.train.seed = seed;
        }
        if let Some(out) = out {
            self.output_dir = out;
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} directory {} does not exist", path.display());
    }
    Ok(())
}

fn resolve_data(data: &DataSection) -> Result<DataSource> {
    if let Some(synth) = &data.synthetic {
        if data.root.is_some() || data.train_low_dir.is_some() {
            bail!("config names both a synthetic dataset and dataset directories; pick one");
        }
        let spec = SyntheticSpec {
            n_pairs: synth.n_pairs + synth.test_pairs,
            image_size: synth.image_size,
            blobs_per_image: synth.blobs_per_image,
            blur_radius: synth.blur_radius,
            seed: 0,
        };
        spec.validate()?;
        if synth.test_pairs == 0 || synth.test_pairs >= spec.n_pairs {
            bail!("synthetic test_pairs must be >= 1 and smaller than n_pairs + test_pairs");
        }
        return Ok(DataSource::Synthetic {
            spec,
            test_pairs: synth.test_pairs,
        });
    }

    let (train_low, train_high, test_low, test_high) = if let Some(root) = &data.root {
        (
            root.join("training_wf"),
            root.join("training_gt"),
            root.join("test_wf").join(&data.noise_level),
            root.join("test_gt"),
        )
    } else {
        match (
            &data.train_low_dir,
            &data.train_high_dir,
            &data.test_low_dir,
            &data.test_high_dir,
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                (a.clone(), b.clone(), c.clone(), d.clone())
            }
            _ => bail!(
                "config must name a dataset: [data] root, the four *_dir keys, or [data.synthetic]"
            ),
        }
    };
    require_dir(&train_low, "train low-resolution")?;
    require_dir(&train_high, "train high-resolution")?;
    require_dir(&test_low, "test low-resolution")?;
    require_dir(&test_high, "test high-resolution")?;
    Ok(DataSource::Directories {
        train_low,
        train_high,
        test_low,
        test_high,
    })
}
