//! Conditional training loop: batch preparation, noise-prediction loss,
//! decoupled-weight-decay Adam, and per-epoch bookkeeping.
//!
//! Randomness is derived per epoch from the run seed, so a run resumed
//! from a checkpoint at epoch `k` replays exactly the batches, timesteps,
//! and noise of an uninterrupted run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::batch::ImageBatch;
use crate::data::PairedDataset;
use crate::denoiser::{NoisePredictor, UNet};
use crate::diffusion::{forward_jump, SamplerVariant};
use crate::error::CoreError;
use crate::math;
use crate::metrics::{self, MetricsConfig, MetricsReport};
use crate::posenc::{self, TimeEncoding};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::Result;

/// Which pixel-difference penalty the noise-prediction loss applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
    AbsoluteError,
}

/// Training-run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_kind: LossKind,
    pub noise_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-4,
            loss_kind: LossKind::SquaredError,
            noise_steps: 2000,
            beta_start: 1e-6,
            beta_end: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CoreError::InvalidConfig(
                "learning_rate must be finite and > 0".into(),
            ));
        }
        crate::schedule::ScheduleConfig::new(self.noise_steps, self.beta_start, self.beta_end)?;
        Ok(())
    }
}

/// Loss and timing bookkeeping of one epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
    pub metrics: Option<MetricsReport>,
}

/// Per-epoch history of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Output of [`prepare_batch`]: the model input (condition channels
/// first, then the corrupted target), the encoded timesteps, the exact
/// noise that was injected, and the raw timesteps it was injected at.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub model_input: ImageBatch,
    pub time_encoding: TimeEncoding,
    pub noise_target: ImageBatch,
    pub timesteps: Vec<usize>,
}

/// Draws one random timestep per sample, corrupts the targets with the
/// fast-forward jump, and concatenates the condition channels in front.
pub fn prepare_batch(
    input_images: &ImageBatch,
    target_images: &ImageBatch,
    schedule: &NoiseSchedule,
    enc_dim: usize,
    rng: &mut Rng,
) -> Result<PreparedBatch> {
    if input_images.batch() != target_images.batch()
        || input_images.height() != target_images.height()
        || input_images.width() != target_images.width()
    {
        return Err(CoreError::ShapeMismatch {
            context: "prepare_batch",
            expected: input_images.dims_string(),
            got: target_images.dims_string(),
        });
    }
    let timesteps: Vec<usize> = (0..target_images.batch())
        .map(|_| rng.next_usize(schedule.noise_steps()))
        .collect();
    let noise = ImageBatch::standard_normal(
        rng,
        target_images.batch(),
        target_images.channels(),
        target_images.height(),
        target_images.width(),
    );
    let (noisy, noise_target) = forward_jump(target_images, &timesteps, schedule, &noise)?;
    let model_input = ImageBatch::concat_channels(input_images, &noisy)?;
    let time_encoding = posenc::encode(&timesteps, enc_dim)?;
    Ok(PreparedBatch {
        model_input,
        time_encoding,
        noise_target,
        timesteps,
    })
}

/// Mean squared or absolute difference over all elements.
pub fn loss(predicted: &ImageBatch, target: &ImageBatch, kind: LossKind) -> Result<f64> {
    predicted.require_same_shape(target, "loss")?;
    let n = predicted.len() as f64;
    let sum: f64 = predicted
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| match kind {
            LossKind::SquaredError => (p - t) * (p - t),
            LossKind::AbsoluteError => math::abs(p - t),
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`loss`] with respect to the prediction.
pub fn loss_gradient(predicted: &ImageBatch, target: &ImageBatch, kind: LossKind) -> ImageBatch {
    let n = predicted.len() as f64;
    predicted.zip(target, |p, t| match kind {
        LossKind::SquaredError => 2.0 * (p - t) / n,
        LossKind::AbsoluteError => {
            if p > t {
                1.0 / n
            } else if p < t {
                -1.0 / n
            } else {
                0.0
            }
        }
    })
}

/// Adam with decoupled weight decay. Moment buffers are laid out in the
/// model's parameter-traversal order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients accumulated in `model`.
    pub fn step(&mut self, model: &mut UNet) {
        self.steps += 1;
        let t = self.steps as f64;
        let bc1 = 1.0 - math::powf(self.beta1, t);
        let bc2 = 1.0 - math::powf(self.beta2, t);
        let mut idx = 0;
        let first_step = self.m.is_empty();
        let (lr, b1, b2, eps, wd) = (
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
        );
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |_, _, data, grad| {
            if first_step {
                m_all.push(vec![0.0; data.len()]);
                v_all.push(vec![0.0; data.len()]);
            }
            let m = &mut m_all[idx];
            let v = &mut v_all[idx];
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * (m_hat / (math::sqrt(v_hat) + eps) + wd * data[i]);
            }
            idx += 1;
        });
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.steps, &self.m, &self.v)
    }

    /// Restores moments saved from a checkpoint. Buffer layout must match
    /// the model's traversal order.
    pub fn restore_state(&mut self, steps: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != v.len() {
            return Err(CoreError::InvalidData(
                "optimizer moment buffers disagree in tensor count".into(),
            ));
        }
        self.steps = steps;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Epoch-end evaluation settings: a held-out set scored through the full
/// sampler. Off by default because it adds a full reverse process per
/// batch.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub data: PairedDataset,
    pub metrics: MetricsConfig,
    pub variant: SamplerVariant,
}

/// Position and loss of one finished training batch, for progress
/// reporting.
#[derive(Debug, Clone, Copy)]
pub struct BatchEvent {
    pub epoch: usize,
    pub batch: usize,
    pub num_batches: usize,
    pub loss: f64,
}

/// Observer hooks of the training loop. `on_epoch` is the checkpointing
/// point: it sees the stats, the model, and the optimizer after each
/// epoch.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_batch: Option<&'a mut dyn FnMut(BatchEvent)>,
    #[allow(clippy::type_complexity)]
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochStats, &UNet, &AdamW) -> Result<()>>,
}

#[cfg(feature = "std")]
fn wall_clock_start() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(feature = "std")]
fn wall_clock_seconds(start: Option<std::time::Instant>) -> f64 {
    start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0)
}

#[cfg(not(feature = "std"))]
fn wall_clock_start() -> Option<()> {
    None
}

#[cfg(not(feature = "std"))]
fn wall_clock_seconds(_start: Option<()>) -> f64 {
    0.0
}

fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

/// Splits a dataset into `(low, high)` batches of at most `batch_size`.
pub fn batch_pairs(data: &PairedDataset, batch_size: usize) -> Vec<(ImageBatch, ImageBatch)> {
    batch_ranges(data.len(), batch_size)
        .into_iter()
        .map(|(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            data.select(&idx)
        })
        .collect()
}

/// Runs the training loop from `start_epoch` (0 for a fresh run) through
/// `cfg.epochs - 1`. Every batch goes through [`prepare_batch`], a cached
/// forward pass, the loss against the injected noise, and one optimizer
/// step with freshly zeroed gradients. `on_epoch` fires after each epoch
/// with the stats, the model, and the optimizer; that is the hook
/// point for checkpointing.
#[allow(clippy::too_many_arguments)]
pub fn train(
    cfg: &TrainConfig,
    model: &mut UNet,
    optimizer: &mut AdamW,
    schedule: &NoiseSchedule,
    train_data: &PairedDataset,
    eval: Option<&EvalSettings>,
    start_epoch: usize,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(CoreError::InvalidData("empty training dataset".into()));
    }
    if schedule.noise_steps() != cfg.noise_steps {
        return Err(CoreError::InvalidConfig(format!(
            "schedule has {} steps but the training config names {}",
            schedule.noise_steps(),
            cfg.noise_steps
        )));
    }
    let expected_in = train_data.low.channels() + train_data.high.channels();
    if model.in_channels() != expected_in || model.out_channels() != train_data.high.channels() {
        return Err(CoreError::InvalidConfig(format!(
            "model channel plan ({} in, {} out) does not match data ({} in, {} out)",
            model.in_channels(),
            model.out_channels(),
            expected_in,
            train_data.high.channels()
        )));
    }
    if start_epoch >= cfg.epochs {
        return Err(CoreError::InvalidConfig(format!(
            "start epoch {start_epoch} is beyond the configured {} epochs",
            cfg.epochs
        )));
    }

    let enc_dim = model.time_encoding_dim();
    let mut history = TrainHistory::default();

    for epoch in start_epoch..cfg.epochs {
        let start = wall_clock_start();
        let mut rng = Rng::derive(cfg.seed, epoch as u64);

        let mut order: Vec<usize> = (0..train_data.len()).collect();
        rng.shuffle(&mut order);
        let ranges = batch_ranges(order.len(), cfg.batch_size);
        let num_batches = ranges.len();

        let mut running_loss = 0.0;
        for (batch_idx, (s, e)) in ranges.into_iter().enumerate() {
            let (low, high) = train_data.select(&order[s..e]);
            let prepared = prepare_batch(&low, &high, schedule, enc_dim, &mut rng)?;
            let (predicted, cache) =
                model.forward_train(&prepared.model_input, &prepared.time_encoding)?;
            let batch_loss = loss(&predicted, &prepared.noise_target, cfg.loss_kind)?;
            if !batch_loss.is_finite() {
                return Err(CoreError::TrainingAborted {
                    epoch,
                    batch: batch_idx,
                    reason: format!("non-finite loss {batch_loss}"),
                });
            }
            model.zero_grad();
            let grad = loss_gradient(&predicted, &prepared.noise_target, cfg.loss_kind);
            model.backward(&cache, &grad);
            optimizer.step(model);
            running_loss += batch_loss;
            if let Some(on_batch) = hooks.on_batch.as_deref_mut() {
                on_batch(BatchEvent {
                    epoch,
                    batch: batch_idx,
                    num_batches,
                    loss: batch_loss,
                });
            }
        }

        let metrics_report = match eval {
            Some(settings) => {
                let batches = batch_pairs(&settings.data, cfg.batch_size);
                Some(metrics::evaluate(
                    model,
                    schedule,
                    &batches,
                    &settings.metrics,
                    settings.variant,
                    Rng::derive(cfg.seed, epoch as u64).next_u64(),
                )?)
            }
            None => None,
        };

        let stats = EpochStats {
            epoch,
            mean_loss: running_loss / num_batches as f64,
            seconds: wall_clock_seconds(start),
            metrics: metrics_report,
        };
        if let Some(hook) = hooks.on_epoch.as_deref_mut() {
            hook(&stats, model, optimizer)?;
        }
        history.epochs.push(stats);
    }

    Ok(history)
}

/// Mean per-sample noise-prediction loss over a dataset with frozen
/// parameters. Each sample's timestep and noise derive from
/// `(seed, sample index)`, and per-sample losses are reduced in index
/// order, so the result is independent of batch composition or ordering.
pub fn dataset_loss(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    data: &PairedDataset,
    kind: LossKind,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::InvalidData("empty dataset".into()));
    }
    let enc_dim = predictor.time_encoding_dim();
    let mut per_sample = vec![0.0; data.len()];
    for (i, slot) in per_sample.iter_mut().enumerate() {
        let mut rng = Rng::derive(seed, i as u64);
        let (low, high) = data.select(&[i]);
        let prepared = prepare_batch(&low, &high, schedule, enc_dim, &mut rng)?;
        let predicted = predictor.predict_at(
            &prepared.model_input,
            &prepared.timesteps,
            &prepared.time_encoding,
        )?;
        *slot = loss(&predicted, &prepared.noise_target, kind)?;
    }
    Ok(per_sample.iter().sum::<f64>() / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{build_unet, UNetConfig};
    use crate::schedule::{build_linear_schedule, ScheduleConfig};
    use crate::synthetic::{generate_synthetic, SyntheticSpec};

    fn tiny_unet_config() -> UNetConfig {
        UNetConfig {
            in_channels: 2,
            out_channels: 1,
            encoder_channels: vec![6, 12],
            bottleneck_channels: vec![16],
            attention_flags: vec![false, false],
            time_embedding_dim: 16,
        }
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            loss_kind: LossKind::SquaredError,
            noise_steps: 50,
            beta_start: 1e-3,
            beta_end: 0.05,
            seed: 7,
        }
    }

    fn tiny_dataset(n: usize) -> PairedDataset {
        generate_synthetic(&SyntheticSpec {
            n_pairs: n,
            image_size: 8,
            blobs_per_image: 2,
            blur_radius: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn prepare_batch_stacks_condition_first() {
        let s = build_linear_schedule(ScheduleConfig::new(50, 1e-3, 0.05).unwrap()).unwrap();
        let ds = tiny_dataset(4);
        let mut rng = Rng::seed_from(1);
        let prepared = prepare_batch(&ds.low, &ds.high, &s, 16, &mut rng).unwrap();
        assert_eq!(prepared.model_input.dims(), (4, 2, 8, 8));
        assert_eq!(prepared.time_encoding.batch(), 4);
        // Channel 0 is the untouched condition.
        for b in 0..4 {
            assert_eq!(prepared.model_input.plane(b, 0), ds.low.plane(b, 0));
        }
    }

    #[test]
    fn prepare_batch_roundtrip_reproduces_noisy_channel() {
        let s = build_linear_schedule(ScheduleConfig::new(50, 1e-3, 0.05).unwrap()).unwrap();
        let ds = tiny_dataset(4);
        let mut rng = Rng::seed_from(2);
        let prepared = prepare_batch(&ds.low, &ds.high, &s, 16, &mut rng).unwrap();
        let (noisy, _) = forward_jump(
            &ds.high,
            &prepared.timesteps,
            &s,
            &prepared.noise_target,
        )
        .unwrap();
        let channel1 = prepared.model_input.channel_range(1, 1);
        assert_eq!(noisy, channel1);
    }

    #[test]
    fn prepare_batch_is_deterministic_in_rng() {
        let s = build_linear_schedule(ScheduleConfig::new(50, 1e-3, 0.05).unwrap()).unwrap();
        let ds = tiny_dataset(4);
        let a = prepare_batch(&ds.low, &ds.high, &s, 16, &mut Rng::seed_from(9)).unwrap();
        let b = prepare_batch(&ds.low, &ds.high, &s, 16, &mut Rng::seed_from(9)).unwrap();
        assert_eq!(a.timesteps, b.timesteps);
        assert_eq!(a.noise_target, b.noise_target);
        assert_eq!(a.model_input, b.model_input);
    }

    #[test]
    fn loss_trivial_cases() {
        let a = ImageBatch::full(1, 1, 2, 2, 0.5);
        assert_eq!(loss(&a, &a, LossKind::SquaredError).unwrap(), 0.0);
        let b = ImageBatch::full(1, 1, 2, 2, 1.0);
        assert!((loss(&a, &b, LossKind::SquaredError).unwrap() - 0.25).abs() < 1e-15);
        assert!((loss(&a, &b, LossKind::AbsoluteError).unwrap() - 0.5).abs() < 1e-15);
        let c = ImageBatch::full(1, 1, 2, 3, 1.0);
        assert!(loss(&a, &c, LossKind::SquaredError).is_err());
    }

    #[test]
    fn train_smoke_single_epoch() {
        let cfg = tiny_train_config();
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let mut model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);
        let ds = tiny_dataset(8);
        let history = train(&cfg, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).unwrap();
        assert_eq!(history.epochs.len(), 1);
        assert!(history.epochs[0].mean_loss.is_finite());
    }

    #[test]
    fn train_is_deterministic_under_a_seed() {
        let mut cfg = tiny_train_config();
        cfg.epochs = 2;
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let ds = tiny_dataset(8);
        let run = || {
            let mut model = build_unet(tiny_unet_config(), 5).unwrap();
            let mut opt = AdamW::new(cfg.learning_rate);
            let history = train(&cfg, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).unwrap();
            (
                history
                    .epochs
                    .iter()
                    .map(|e| e.mean_loss)
                    .collect::<Vec<_>>(),
                model.param_checksum(),
            )
        };
        let (la, ca) = run();
        let (lb, cb) = run();
        assert_eq!(la, lb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn training_reduces_loss_within_five_epochs() {
        let mut cfg = tiny_train_config();
        cfg.epochs = 5;
        cfg.learning_rate = 3e-3;
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let mut model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);
        let ds = tiny_dataset(64);
        let history = train(&cfg, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).unwrap();
        let first = history.epochs[0].mean_loss;
        let last = history.epochs[4].mean_loss;
        assert!(
            last < 0.5 * first,
            "epoch 5 loss {last} not below half of epoch 1 loss {first}"
        );
    }

    #[test]
    fn train_aborts_on_non_finite_loss_with_position() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            ..tiny_train_config()
        };
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let mut model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);
        // Gigantic but finite pixels overflow the squared loss to infinity.
        let low = ImageBatch::full(4, 1, 8, 8, 1e200);
        let high = ImageBatch::full(4, 1, 8, 8, 1e200);
        let ds = PairedDataset::new(low, high).unwrap();
        let err = train(&cfg, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).unwrap_err();
        match err {
            CoreError::TrainingAborted { epoch, batch, .. } => {
                assert_eq!(epoch, 0);
                assert_eq!(batch, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn train_rejects_channel_plan_mismatch() {
        let cfg = tiny_train_config();
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let mut bad = tiny_unet_config();
        bad.in_channels = 3;
        let mut model = build_unet(bad, 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);
        let ds = tiny_dataset(8);
        assert!(train(&cfg, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).is_err());
    }

    #[test]
    fn dataset_loss_is_batch_order_invariant() {
        let s = build_linear_schedule(ScheduleConfig::new(50, 1e-3, 0.05).unwrap()).unwrap();
        let model = build_unet(tiny_unet_config(), 5).unwrap();
        let ds = tiny_dataset(10);
        let full = dataset_loss(&model, &s, &ds, LossKind::SquaredError, 321).unwrap();
        // Reordering the dataset does not change per-index draws, so a
        // permuted dataset evaluated per its own indices differs, but
        // evaluating the same dataset twice is bit-identical, and the
        // value does not depend on any batch grouping by construction.
        let again = dataset_loss(&model, &s, &ds, LossKind::SquaredError, 321).unwrap();
        assert_eq!(full, again);
    }

    #[test]
    fn epoch_end_evaluation_leaves_parameters_untouched() {
        let mut cfg = tiny_train_config();
        cfg.noise_steps = 8;
        cfg.beta_start = 1e-3;
        cfg.beta_end = 0.3;
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        // 32x32 images satisfy the MS-SSIM minimum of 28.
        let ds = generate_synthetic(&SyntheticSpec {
            n_pairs: 6,
            image_size: 32,
            blobs_per_image: 2,
            blur_radius: 1.0,
            seed: 3,
        })
        .unwrap();
        let (train_set, eval_set) = ds.split_tail(2).unwrap();
        let mut model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);

        let eval = EvalSettings {
            data: eval_set,
            metrics: MetricsConfig::default(),
            variant: SamplerVariant::Simplified,
        };
        let mut checksums = Vec::new();
        let mut on_epoch = |_: &EpochStats, m: &UNet, _: &AdamW| -> crate::Result<()> {
            checksums.push(m.param_checksum());
            Ok(())
        };
        let history = train(
            &cfg,
            &mut model,
            &mut opt,
            &s,
            &train_set,
            Some(&eval),
            0,
            TrainHooks {
                on_epoch: Some(&mut on_epoch),
                ..Default::default()
            },
        )
        .unwrap();
        let report = history.epochs[0].metrics.as_ref().unwrap();
        assert!(report.ssim.is_finite());
        assert!(report.mae >= 0.0);
        // The hook saw the post-step checksum; evaluating again must not
        // have changed it.
        assert_eq!(checksums[0], model.param_checksum());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut cfg = tiny_train_config();
        cfg.epochs = 4;
        let s = build_linear_schedule(
            ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
        )
        .unwrap();
        let ds = tiny_dataset(8);

        let mut full_model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut full_opt = AdamW::new(cfg.learning_rate);
        let full_history =
            train(&cfg, &mut full_model, &mut full_opt, &s, &ds, None, 0, TrainHooks::default()).unwrap();

        // Run two epochs, "checkpoint" in memory, resume for the rest.
        let mut cfg_half = cfg;
        cfg_half.epochs = 2;
        let mut model = build_unet(tiny_unet_config(), 5).unwrap();
        let mut opt = AdamW::new(cfg.learning_rate);
        train(&cfg_half, &mut model, &mut opt, &s, &ds, None, 0, TrainHooks::default()).unwrap();
        let resumed_history =
            train(&cfg, &mut model, &mut opt, &s, &ds, None, 2, TrainHooks::default()).unwrap();

        assert_eq!(model.param_checksum(), full_model.param_checksum());
        let full_tail: Vec<f64> = full_history.epochs[2..]
            .iter()
            .map(|e| e.mean_loss)
            .collect();
        let resumed: Vec<f64> = resumed_history.epochs.iter().map(|e| e.mean_loss).collect();
        assert_eq!(full_tail, resumed);
    }
}
