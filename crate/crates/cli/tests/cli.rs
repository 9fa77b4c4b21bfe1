//! End-to-end tests of the command layer: dataset ingestion, checkpoint
//! round-trips, output determinism, and resume equivalence. Everything
//! runs on tiny synthetic configurations.

use std::fs::File;
use std::path::{Path, PathBuf};

use tempfile::TempDir;
use tiff::encoder::{colortype, TiffEncoder};

use ddpm_cli::checkpoint;
use ddpm_cli::commands::{cmd_eval, cmd_forward_demo, cmd_sample, cmd_train, CommonArgs};
use ddpm_cli::dataio;
use ddpm_cli::export;
use ddpm_core::denoiser::{build_unet, UNetConfig};
use ddpm_core::metrics::{self, MetricsConfig};
use ddpm_core::trainer::AdamW;

fn write_tiff_u8(path: &Path, w: u32, h: u32, pixels: &[u8]) {
    let mut file = File::create(path).unwrap();
    let mut enc = TiffEncoder::new(&mut file).unwrap();
    enc.write_image::<colortype::Gray8>(w, h, pixels).unwrap();
}

fn write_tiff_u16(path: &Path, w: u32, h: u32, pixels: &[u16]) {
    let mut file = File::create(path).unwrap();
    let mut enc = TiffEncoder::new(&mut file).unwrap();
    enc.write_image::<colortype::Gray16>(w, h, pixels).unwrap();
}

fn common(config: &Path, out: &Path, seed: Option<u64>) -> CommonArgs {
    CommonArgs {
        config: config.to_path_buf(),
        seed,
        out: Some(out.to_path_buf()),
        quiet: true,
    }
}

/// Tiny synthetic run configuration shared by the command tests.
fn tiny_config(dir: &Path, epochs: usize, extra_run: &str) -> PathBuf {
    let text = format!(
        r#"
[schedule]
noise_steps = 8
beta_start = 0.001
beta_end = 0.2

[train]
epochs = {epochs}
batch_size = 4
learning_rate = 0.001

[unet]
encoder_channels = [4, 8]
bottleneck_channels = [8]
time_embedding_dim = 8

[data.synthetic]
n_pairs = 8
test_pairs = 4
image_size = 8
blobs_per_image = 2
blur_radius = 1.0

[run]
seed = 11
{extra_run}
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Training CSV with the wall-clock column dropped; everything else in
/// the file is deterministic.
fn history_without_seconds(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let mut kept: Vec<&str> = cols[..2.min(cols.len())].to_vec();
            if cols.len() > 3 {
                kept.extend_from_slice(&cols[3..]);
            }
            kept.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn scan_pairs_and_normalisation_endpoints() {
    let tmp = TempDir::new().unwrap();
    let low = tmp.path().join("wf");
    let high = tmp.path().join("gt");
    std::fs::create_dir_all(&low).unwrap();
    std::fs::create_dir_all(&high).unwrap();

    // 8-bit pair with extreme pixel values, plus an unpaired extra file.
    let mut pixels = vec![128u8; 16];
    pixels[0] = 0;
    pixels[1] = 255;
    write_tiff_u8(&low.join("b.tif"), 4, 4, &pixels);
    write_tiff_u8(&high.join("b.tif"), 4, 4, &pixels);
    let pixels16: Vec<u16> = vec![0, 65535, 32768, 100]
        .into_iter()
        .chain(std::iter::repeat_n(500, 12))
        .collect();
    write_tiff_u16(&low.join("a.tif"), 4, 4, &pixels16);
    write_tiff_u16(&high.join("a.tif"), 4, 4, &pixels16);
    write_tiff_u8(&low.join("only_low.tif"), 4, 4, &[0; 16]);

    let manifest = dataio::scan(&low, &high).unwrap();
    assert_eq!(manifest.filenames, vec!["a.tif", "b.tif"]);
    assert_eq!(manifest.image_size, (4, 4));

    // 16-bit: 0 -> -1, 65535 -> +1.
    let (a_low, _) = manifest.load_pair(0).unwrap();
    assert_eq!(a_low.as_slice()[0], -1.0);
    assert_eq!(a_low.as_slice()[1], 1.0);
    // 8-bit: 0 -> -1, 255 -> +1.
    let (b_low, b_high) = manifest.load_pair(1).unwrap();
    assert_eq!(b_low.as_slice()[0], -1.0);
    assert_eq!(b_low.as_slice()[1], 1.0);
    assert_eq!(b_low.as_slice(), b_high.as_slice());

    assert!(manifest.load_pair(2).is_err());
}

#[test]
fn scan_rejects_disjoint_and_corrupt_inputs() {
    let tmp = TempDir::new().unwrap();
    let low = tmp.path().join("wf");
    let high = tmp.path().join("gt");
    std::fs::create_dir_all(&low).unwrap();
    std::fs::create_dir_all(&high).unwrap();
    write_tiff_u8(&low.join("a.tif"), 2, 2, &[0; 4]);
    write_tiff_u8(&high.join("b.tif"), 2, 2, &[0; 4]);
    assert!(matches!(
        dataio::scan(&low, &high),
        Err(dataio::DataError::EmptyIntersection { .. })
    ));

    write_tiff_u8(&high.join("a.tif"), 2, 2, &[0; 4]);
    std::fs::write(low.join("broken.tif"), b"not a tiff").unwrap();
    write_tiff_u8(&high.join("broken.tif"), 2, 2, &[0; 4]);
    let err = dataio::scan(&low, &high).unwrap_err();
    assert!(format!("{err}").contains("broken.tif"), "{err}");
}

#[test]
fn scan_rejects_mismatched_dimensions() {
    let tmp = TempDir::new().unwrap();
    let low = tmp.path().join("wf");
    let high = tmp.path().join("gt");
    std::fs::create_dir_all(&low).unwrap();
    std::fs::create_dir_all(&high).unwrap();
    write_tiff_u8(&low.join("a.tif"), 2, 2, &[0; 4]);
    write_tiff_u8(&high.join("a.tif"), 2, 2, &[0; 4]);
    write_tiff_u8(&low.join("b.tif"), 4, 4, &[0; 16]);
    write_tiff_u8(&high.join("b.tif"), 4, 4, &[0; 16]);
    let err = dataio::scan(&low, &high).unwrap_err();
    assert!(matches!(err, dataio::DataError::Inconsistent { .. }));
}

#[test]
fn tiff_normalisation_roundtrip_within_quantisation() {
    let tmp = TempDir::new().unwrap();
    let low = tmp.path().join("wf");
    let high = tmp.path().join("gt");
    std::fs::create_dir_all(&low).unwrap();
    std::fs::create_dir_all(&high).unwrap();
    let pixels: Vec<u16> = (0..64).map(|i| (i * 1021) as u16).collect();
    write_tiff_u16(&low.join("x.tif"), 8, 8, &pixels);
    write_tiff_u16(&high.join("x.tif"), 8, 8, &pixels);
    let manifest = dataio::scan(&low, &high).unwrap();
    let (img, _) = manifest.load_pair(0).unwrap();
    for (&v, &p) in img.as_slice().iter().zip(&pixels) {
        let back = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 65535.0).round() as u16;
        assert!((back as i32 - p as i32).abs() <= 1, "{back} vs {p}");
    }
}

#[test]
fn checkpoint_roundtrip_preserves_everything() {
    let tmp = TempDir::new().unwrap();
    let cfg = UNetConfig {
        in_channels: 2,
        out_channels: 1,
        encoder_channels: vec![4, 6],
        bottleneck_channels: vec![8],
        attention_flags: vec![true, false],
        time_embedding_dim: 8,
    };
    let model = build_unet(cfg.clone(), 3).unwrap();
    let mut opt = AdamW::new(1e-3);
    // Give the optimizer non-trivial state.
    let mut trained = model.clone();
    trained
        .visit_params_mut(&mut |_, _, _, grad| grad.iter_mut().for_each(|g| *g = 0.01));
    opt.step(&mut trained);

    let path = tmp.path().join("model.ckpt");
    checkpoint::save(&path, &trained, &opt, 7).unwrap();
    let ck = checkpoint::load(&path).unwrap();
    assert_eq!(ck.epochs_completed, 7);
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.model.param_checksum(), trained.param_checksum());
    assert_eq!(ck.opt_steps, 1);
    let (_, m, v) = opt.state();
    assert_eq!(ck.opt_m, m);
    assert_eq!(ck.opt_v, v);

    // Mismatch detection names the differing field.
    let mut other = cfg.clone();
    other.encoder_channels = vec![4, 8];
    assert_eq!(
        checkpoint::config_mismatch(&ck.config, &other),
        Some("encoder_channels")
    );

    // Corrupt magic is rejected.
    let mut bytes = read_bytes(&path);
    bytes[0] = b'X';
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    assert!(checkpoint::load(&bad).is_err());
}

#[test]
fn train_writes_checkpoints_and_csv() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 2, "");
    let out = tmp.path().join("out");
    cmd_train(&common(&config, &out, None), None).unwrap();

    assert!(out.join("epoch_0001.ckpt").is_file());
    assert!(out.join("epoch_0002.ckpt").is_file());
    assert!(out.join("best.ckpt").is_file());
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "epoch,mean_loss,seconds");
    assert!(lines[1].starts_with("0,"));
    assert!(lines[2].starts_with("1,"));
}

#[test]
fn train_with_missing_dataset_leaves_no_outputs() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[data]
root = "/nonexistent/biosr"
"#;
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, text).unwrap();
    let out = tmp.path().join("out");
    let err = cmd_train(&common(&config, &out, None), None).unwrap_err();
    assert!(format!("{err}").contains("does not exist"));
    assert!(!out.exists(), "no partial outputs on config errors");
}

#[test]
fn train_is_byte_deterministic_under_a_seed() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 2, "");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    cmd_train(&common(&config, &out_a, Some(5)), None).unwrap();
    cmd_train(&common(&config, &out_b, Some(5)), None).unwrap();
    assert_eq!(
        history_without_seconds(&out_a.join("loss.csv")),
        history_without_seconds(&out_b.join("loss.csv"))
    );
    assert_eq!(
        read_bytes(&out_a.join("epoch_0002.ckpt")),
        read_bytes(&out_b.join("epoch_0002.ckpt"))
    );
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let config_full = tiny_config(tmp.path(), 4, "");
    let out_full = tmp.path().join("full");
    cmd_train(&common(&config_full, &out_full, None), None).unwrap();

    // Same run split at epoch 2: fresh config with 2 epochs, then resume
    // under the 4-epoch config.
    let half_dir = tmp.path().join("halfcfg");
    std::fs::create_dir_all(&half_dir).unwrap();
    let config_half = tiny_config(&half_dir, 2, "");
    let out_resumed = tmp.path().join("resumed");
    cmd_train(&common(&config_half, &out_resumed, None), None).unwrap();
    cmd_train(
        &common(&config_full, &out_resumed, None),
        Some(&out_resumed.join("epoch_0002.ckpt")),
    )
    .unwrap();

    assert_eq!(
        read_bytes(&out_full.join("epoch_0004.ckpt")),
        read_bytes(&out_resumed.join("epoch_0004.ckpt"))
    );
    assert_eq!(
        history_without_seconds(&out_full.join("loss.csv")),
        history_without_seconds(&out_resumed.join("loss.csv"))
    );
}

#[test]
fn sample_writes_grids_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 1, "");
    let out = tmp.path().join("out");
    cmd_train(&common(&config, &out, None), None).unwrap();
    let ckpt = out.join("epoch_0001.ckpt");

    let sample_a = tmp.path().join("sa");
    cmd_sample(&common(&config, &sample_a, None), &ckpt, 2, &[0, 7, 3]).unwrap();
    assert!(sample_a.join("trajectories.png").is_file());
    assert!(sample_a.join("sample_000.png").is_file());
    assert!(sample_a.join("sample_001.png").is_file());

    let sample_b = tmp.path().join("sb");
    cmd_sample(&common(&config, &sample_b, None), &ckpt, 2, &[0, 7, 3]).unwrap();
    assert_eq!(
        read_bytes(&sample_a.join("trajectories.png")),
        read_bytes(&sample_b.join("trajectories.png"))
    );
    assert_eq!(
        read_bytes(&sample_a.join("sample_000.png")),
        read_bytes(&sample_b.join("sample_000.png"))
    );
}

#[test]
fn sample_unconditionally_when_model_takes_one_channel() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[schedule]
noise_steps = 6
beta_start = 0.01
beta_end = 0.3

[train]
epochs = 1
batch_size = 4
learning_rate = 0.001

[unet]
in_channels = 1
out_channels = 1
encoder_channels = [4, 8]
bottleneck_channels = [8]
time_embedding_dim = 8

[data.synthetic]
n_pairs = 8
test_pairs = 2
image_size = 8
blobs_per_image = 2
blur_radius = 0.0

[run]
seed = 11
image_size = 8
"#;
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, text).unwrap();

    // A 1 -> 1 channel model cannot be trained on (condition, target)
    // pairs, so build and checkpoint it directly.
    let cfg = UNetConfig {
        in_channels: 1,
        out_channels: 1,
        encoder_channels: vec![4, 8],
        bottleneck_channels: vec![8],
        attention_flags: vec![false, false],
        time_embedding_dim: 8,
    };
    let model = build_unet(cfg, 3).unwrap();
    let opt = AdamW::new(1e-3);
    let out = tmp.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let ckpt = out.join("model.ckpt");
    checkpoint::save(&ckpt, &model, &opt, 0).unwrap();

    let sample_out = tmp.path().join("s");
    cmd_sample(&common(&config, &sample_out, None), &ckpt, 3, &[0]).unwrap();
    assert!(sample_out.join("trajectories.png").is_file());
    assert!(sample_out.join("sample_002.png").is_file());
}

#[test]
fn sample_rejects_checkpoint_config_mismatch() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 1, "");
    let out = tmp.path().join("out");
    cmd_train(&common(&config, &out, None), None).unwrap();

    let other_dir = tmp.path().join("other");
    std::fs::create_dir_all(&other_dir).unwrap();
    let other_text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("encoder_channels = [4, 8]", "encoder_channels = [4, 6]");
    let other_config = other_dir.join("run.toml");
    std::fs::write(&other_config, other_text).unwrap();

    let err = cmd_sample(
        &common(&other_config, &tmp.path().join("s"), None),
        &out.join("epoch_0001.ckpt"),
        1,
        &[0],
    )
    .unwrap_err();
    assert!(format!("{err}").contains("encoder_channels"), "{err}");
}

#[test]
fn eval_report_matches_recomputation_from_dumped_files() {
    let tmp = TempDir::new().unwrap();
    // 32x32 images so MS-SSIM has room at three scales. The posterior
    // sampler keeps final outputs inside [-1, 1], so the clamped 16-bit
    // dumps represent the scored values exactly (up to quantisation).
    let extra = "sampler_variant = \"posterior\"";
    let text = format!(
        r#"
[schedule]
noise_steps = 6
beta_start = 0.01
beta_end = 0.3

[train]
epochs = 1
batch_size = 3
learning_rate = 0.001

[unet]
encoder_channels = [4, 8]
bottleneck_channels = [8]
time_embedding_dim = 8

[data.synthetic]
n_pairs = 6
test_pairs = 5
image_size = 32
blobs_per_image = 2
blur_radius = 1.0

[run]
seed = 11
{extra}
"#
    );
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, text).unwrap();
    let out = tmp.path().join("out");
    cmd_train(&common(&config, &out, None), None).unwrap();
    let ckpt = out.join("epoch_0001.ckpt");

    let eval_a = tmp.path().join("ea");
    cmd_eval(&common(&config, &eval_a, None), &ckpt).unwrap();
    let csv_a = std::fs::read_to_string(eval_a.join("metrics.csv")).unwrap();

    // Determinism: identical invocation, identical CSV.
    let eval_b = tmp.path().join("eb");
    cmd_eval(&common(&config, &eval_b, None), &ckpt).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(eval_b.join("metrics.csv")).unwrap());

    // Recompute the report from the dumped 16-bit files. Batches were
    // (3, 2) pairs, metrics averaged by batch count.
    let parse_row: Vec<f64> = csv_a
        .trim()
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .take(5)
        .map(|v| v.parse().unwrap())
        .collect();
    let mcfg = MetricsConfig::default();
    let load = |prefix: &str, i: usize| {
        export::load_png16(&eval_a.join(format!("{prefix}_{i:03}_000.png"))).unwrap()
    };
    // Rebuild the evaluation batches (3 then 2 pairs) from the files and
    // apply the same per-batch metrics, averaged by batch count.
    let stack = |prefix: &str, indices: std::ops::Range<usize>| {
        let first = load(prefix, indices.start);
        let mut out = ddpm_core::ImageBatch::zeros(
            indices.len(),
            1,
            first.height(),
            first.width(),
        );
        for (slot, i) in indices.enumerate() {
            out.sample_mut(slot).copy_from_slice(load(prefix, i).as_slice());
        }
        out
    };
    let mut recomputed = [0.0; 5];
    for indices in [0..3usize, 3..5] {
        let gen = stack("generated", indices.clone());
        let tgt = stack("target", indices);
        recomputed[0] += metrics::ssim(&gen, &tgt, &mcfg).unwrap() / 2.0;
        recomputed[1] += metrics::ms_ssim(&gen, &tgt, &mcfg).unwrap() / 2.0;
        recomputed[2] += metrics::psnr(&gen, &tgt, &mcfg).unwrap() / 2.0;
        recomputed[3] += metrics::mae(&gen, &tgt).unwrap() / 2.0;
        recomputed[4] += metrics::nrmse(&gen, &tgt).unwrap() / 2.0;
    }
    for metric_idx in 0..5 {
        let reported = parse_row[metric_idx];
        // The only difference left is 16-bit quantisation of the files.
        assert!(
            (recomputed[metric_idx] - reported).abs() < 2e-3 * reported.abs().max(1.0),
            "metric {metric_idx}: recomputed {} vs reported {reported}",
            recomputed[metric_idx]
        );
    }
}

#[test]
fn forward_demo_writes_strip_and_validates_timesteps() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 1, "");

    // Input image: a gradient TIFF.
    let pixels: Vec<u16> = (0..64).map(|i| (i * 1000) as u16).collect();
    let image = tmp.path().join("input.tif");
    write_tiff_u16(&image, 8, 8, &pixels);

    let out = tmp.path().join("fd");
    cmd_forward_demo(
        &common(&config, &out, None),
        &image,
        &[0, 2, 4, 6],
        false,
    )
    .unwrap();
    assert!(out.join("forward_strip.png").is_file());

    // Out-of-range timestep is rejected (schedule has 8 steps).
    let err = cmd_forward_demo(&common(&config, &out, None), &image, &[8], false).unwrap_err();
    assert!(format!("{err}").contains("out of range"));

    // Determinism of the noisy strip.
    let out_b = tmp.path().join("fd2");
    cmd_forward_demo(&common(&config, &out_b, None), &image, &[0, 2, 4, 6], false).unwrap();
    assert_eq!(
        read_bytes(&out.join("forward_strip.png")),
        read_bytes(&out_b.join("forward_strip.png"))
    );
}

#[test]
fn forward_demo_noise_off_at_zero_is_a_pure_rescale() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), 1, "");
    let pixels: Vec<u16> = (0..64).map(|i| (i * 1000) as u16).collect();
    let image = tmp.path().join("input.tif");
    write_tiff_u16(&image, 8, 8, &pixels);

    let out = tmp.path().join("fd");
    cmd_forward_demo(&common(&config, &out, None), &image, &[0], true).unwrap();

    // With noise off, t = 0 is sqrt(1 - 0.001) * x: visually the input.
    let strip = image::open(out.join("forward_strip.png")).unwrap().into_luma8();
    let input = dataio::load_single_image(&image).unwrap();
    for (i, &p) in strip.as_raw().iter().enumerate() {
        let x = input.as_slice()[i];
        let expected = ((x * (1.0f64 - 0.001).sqrt() + 1.0) / 2.0 * 255.0).round() as i32;
        assert!((p as i32 - expected).abs() <= 1, "pixel {i}: {p} vs {expected}");
    }
}
