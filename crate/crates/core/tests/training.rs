//! Training-level integration tests: the analytic Gaussian predictor is
//! the Bayes denoiser on Gaussian data, so no trained network may beat it.

use ddpm_core::batch::ImageBatch;
use ddpm_core::data::PairedDataset;
use ddpm_core::denoiser::{
    analytic_gaussian_predictor, build_unet, GaussianOracleParams, NoisePredictor, UNetConfig,
};
use ddpm_core::rng::Rng;
use ddpm_core::schedule::{build_linear_schedule, ScheduleConfig};
use ddpm_core::trainer::{
    dataset_loss, loss, prepare_batch, train, AdamW, LossKind, TrainConfig, TrainHooks,
};

#[test]
fn oracle_loss_is_a_floor_for_trained_networks() {
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        learning_rate: 2e-3,
        loss_kind: LossKind::SquaredError,
        noise_steps: 40,
        beta_start: 1e-3,
        beta_end: 0.1,
        seed: 5,
    };
    let schedule = build_linear_schedule(
        ScheduleConfig::new(cfg.noise_steps, cfg.beta_start, cfg.beta_end).unwrap(),
    )
    .unwrap();

    // Per-pixel Gaussian targets with an uninformative constant condition:
    // nothing in the input helps beyond the noisy state itself, so the
    // conditional-expectation oracle caps what any network can achieve.
    let (m, sd) = (0.1, 0.6);
    let mut rng = Rng::seed_from(77);
    let n = 64;
    let mut high = ImageBatch::zeros(n, 1, 8, 8);
    for v in high.as_mut_slice() {
        *v = m + sd * rng.standard_normal();
    }
    let data = PairedDataset::new(ImageBatch::zeros(n, 1, 8, 8), high).unwrap();

    let unet_cfg = UNetConfig {
        in_channels: 2,
        out_channels: 1,
        encoder_channels: vec![6, 12],
        bottleneck_channels: vec![16],
        attention_flags: vec![false, false],
        time_embedding_dim: 16,
    };
    let mut model = build_unet(unet_cfg, 3).unwrap();
    let mut opt = AdamW::new(cfg.learning_rate);
    train(
        &cfg,
        &mut model,
        &mut opt,
        &schedule,
        &data,
        None,
        0,
        TrainHooks::default(),
    )
    .unwrap();

    let trained_loss = dataset_loss(&model, &schedule, &data, cfg.loss_kind, 999).unwrap();

    // Oracle loss over the very same per-sample draws; its input is the
    // noisy state alone (it takes one channel), so the placeholder
    // condition channel is stripped.
    let oracle = analytic_gaussian_predictor(
        GaussianOracleParams::new(m, sd, schedule.clone()).unwrap(),
        16,
    );
    let mut total = 0.0;
    for i in 0..n {
        let mut draw_rng = Rng::derive(999, i as u64);
        let (low_i, high_i) = data.select(&[i]);
        let prepared = prepare_batch(&low_i, &high_i, &schedule, 16, &mut draw_rng).unwrap();
        let noisy_only = prepared.model_input.channel_range(1, 1);
        let predicted = oracle
            .predict_at(&noisy_only, &prepared.timesteps, &prepared.time_encoding)
            .unwrap();
        total += loss(&predicted, &prepared.noise_target, cfg.loss_kind).unwrap();
    }
    let oracle_loss = total / n as f64;

    assert!(oracle_loss.is_finite() && trained_loss.is_finite());
    // Identical draws, identical data: the Bayes predictor cannot lose.
    // A small slack absorbs Monte Carlo noise in the shared draws.
    assert!(
        oracle_loss <= trained_loss + 0.02,
        "oracle loss {oracle_loss} should not exceed trained loss {trained_loss}"
    );
}
