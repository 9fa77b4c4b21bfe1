//! Attention U-Net noise predictor with hand-rolled backpropagation.
//!
//! Each level runs two 3x3 convolutions with SiLU activations, then adds
//! a per-channel projection of the time encoding, then (optionally)
//! single-head self-attention. Levels are joined by 2x average pooling on
//! the way down and 2x nearest upsampling plus skip concatenation on the
//! way up; the read of the architecture sketch is: time encodings are
//! injected at every encoder and decoder level, the bottleneck is a plain
//! convolution stack at the deepest resolution, and no normalisation or
//! dropout layers are used anywhere.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{
    add_channel_bias, avgpool2_backward, avgpool2_forward, channel_bias_grad, silu_backward,
    silu_forward, upsample2_backward, upsample2_forward, AttnCache, Attention, Conv2d, Dense,
};
use super::{check_predict_input, NoisePredictor};
use crate::batch::ImageBatch;
use crate::error::CoreError;
use crate::posenc::TimeEncoding;
use crate::rng::Rng;
use crate::Result;

/// Architecture of the attention U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// 2 for conditional use (condition + noisy state), 1 unconditional.
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub bottleneck_channels: Vec<usize>,
    /// One flag per encoder level; mirrored onto the decoder.
    pub attention_flags: Vec<bool>,
    pub time_embedding_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 2,
            out_channels: 1,
            encoder_channels: vec![32, 64, 128],
            bottleneck_channels: vec![256, 256],
            attention_flags: vec![false, false, false],
            time_embedding_dim: 256,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(CoreError::InvalidConfig(
                "in_channels and out_channels must be >= 1".into(),
            ));
        }
        if self.encoder_channels.is_empty() {
            return Err(CoreError::InvalidConfig(
                "encoder_channels must name at least one level".into(),
            ));
        }
        if self.encoder_channels.contains(&0)
            || self.bottleneck_channels.contains(&0)
        {
            return Err(CoreError::InvalidConfig(
                "channel counts must be >= 1".into(),
            ));
        }
        if self.attention_flags.len() != self.encoder_channels.len() {
            return Err(CoreError::InvalidConfig(format!(
                "attention_flags length {} must equal encoder_channels length {}",
                self.attention_flags.len(),
                self.encoder_channels.len()
            )));
        }
        if self.time_embedding_dim < 2 || !self.time_embedding_dim.is_multiple_of(2) {
            return Err(CoreError::InvalidConfig(format!(
                "time_embedding_dim must be even and >= 2, got {}",
                self.time_embedding_dim
            )));
        }
        Ok(())
    }

    /// Spatial divisor the input must satisfy: `2^(levels - 1)`.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.encoder_channels.len() - 1)
    }
}

/// One resolution level: two convolutions with a 1x1-projected residual
/// shortcut, a time projection, and optional self-attention. The
/// shortcut keeps early optimisation fast at small learning rates.
#[derive(Debug, Clone)]
struct Stage {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
    time: Dense,
    attn: Option<Attention>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    x: ImageBatch,
    pre: ImageBatch,
}

#[derive(Debug, Clone)]
struct StageCache {
    c1: ConvCache,
    c2: ConvCache,
    attn: Vec<AttnCache>,
    /// Decoder only: channel count of the upsampled (non-skip) part.
    concat_split: usize,
}

/// Activations recorded by [`UNet::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct UNetCache {
    t_rows: Vec<f64>,
    batch: usize,
    enc: Vec<StageCache>,
    bneck: Vec<ConvCache>,
    dec: Vec<StageCache>,
    head_x: ImageBatch,
}

impl Stage {
    fn new(in_ch: usize, out_ch: usize, enc_dim: usize, attention: bool, rng: &mut Rng) -> Self {
        Stage {
            conv1: Conv2d::new(in_ch, out_ch, 3, rng),
            conv2: Conv2d::new(out_ch, out_ch, 3, rng),
            shortcut: Conv2d::new(in_ch, out_ch, 1, rng),
            time: Dense::new(enc_dim, out_ch, rng),
            attn: attention.then(|| Attention::new(out_ch, rng)),
        }
    }

    fn forward(
        &self,
        x: &ImageBatch,
        t_rows: &[f64],
        batch: usize,
        concat_split: usize,
        want_cache: bool,
    ) -> (ImageBatch, Option<StageCache>) {
        let pre1 = self.conv1.forward(x);
        let a1 = silu_forward(&pre1);
        let pre2 = self.conv2.forward(&a1);
        let a2 = silu_forward(&pre2);
        let res = a2.zip(&self.shortcut.forward(x), |a, b| a + b);
        let bias = self.time.forward(t_rows, batch);
        let a3 = add_channel_bias(&res, &bias);
        let (out, attn_cache) = match &self.attn {
            Some(attn) => attn.forward(&a3, want_cache),
            None => (a3, Vec::new()),
        };
        let cache = want_cache.then(|| StageCache {
            c1: ConvCache {
                x: x.clone(),
                pre: pre1,
            },
            c2: ConvCache { x: a1, pre: pre2 },
            attn: attn_cache,
            concat_split,
        });
        (out, cache)
    }

    fn backward(
        &mut self,
        cache: &StageCache,
        gy: &ImageBatch,
        t_rows: &[f64],
        batch: usize,
    ) -> ImageBatch {
        let g = match &mut self.attn {
            Some(attn) => attn.backward(&cache.attn, gy),
            None => gy.clone(),
        };
        self.time.backward(t_rows, batch, &channel_bias_grad(&g));
        let g_short = self.shortcut.backward(&cache.c1.x, &g);
        let g = silu_backward(&cache.c2.pre, &g);
        let g = self.conv2.backward(&cache.c2.x, &g);
        let g = silu_backward(&cache.c1.pre, &g);
        let g_main = self.conv1.backward(&cache.c1.x, &g);
        g_main.zip(&g_short, |a, b| a + b)
    }

    fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.conv2.zero_grad();
        self.shortcut.zero_grad();
        self.time.zero_grad();
        if let Some(attn) = &mut self.attn {
            attn.zero_grad();
        }
    }
}

/// Mutable parameter visitor: name, shape, values, gradient buffer.
pub type ParamVisitorMut<'a> = dyn FnMut(&str, &[usize], &mut [f64], &mut [f64]) + 'a;

/// Read-only parameter visitor: name, shape, values.
pub type ParamVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Trainable attention U-Net.
#[derive(Debug, Clone)]
pub struct UNet {
    cfg: UNetConfig,
    enc: Vec<Stage>,
    bneck: Vec<Conv2d>,
    /// Decoder stages in processing order, deepest level first.
    dec: Vec<Stage>,
    head: Conv2d,
}

/// Builds a U-Net with parameters initialised deterministically from the
/// seed: uniform in `±1/sqrt(fan_in)` per layer.
pub fn build_unet(cfg: UNetConfig, seed: u64) -> Result<UNet> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(seed);
    let levels = cfg.encoder_channels.len();
    let enc_dim = cfg.time_embedding_dim;

    let mut enc = Vec::with_capacity(levels);
    let mut prev = cfg.in_channels;
    for (i, &ch) in cfg.encoder_channels.iter().enumerate() {
        enc.push(Stage::new(prev, ch, enc_dim, cfg.attention_flags[i], &mut rng));
        prev = ch;
    }

    let mut bneck = Vec::with_capacity(cfg.bottleneck_channels.len());
    for &ch in &cfg.bottleneck_channels {
        bneck.push(Conv2d::new(prev, ch, 3, &mut rng));
        prev = ch;
    }

    // prev is now the channel count arriving at the deepest decoder level.
    let mut dec = Vec::with_capacity(levels);
    for lvl in (0..levels).rev() {
        let ch = cfg.encoder_channels[lvl];
        dec.push(Stage::new(
            prev + ch,
            ch,
            enc_dim,
            cfg.attention_flags[lvl],
            &mut rng,
        ));
        prev = ch;
    }

    let head = Conv2d::new(cfg.encoder_channels[0], cfg.out_channels, 3, &mut rng);

    Ok(UNet {
        cfg,
        enc,
        bneck,
        dec,
        head,
    })
}

impl UNet {
    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    fn check_input(&self, x: &ImageBatch, t_enc: &TimeEncoding) -> Result<()> {
        check_predict_input(x, t_enc, self.cfg.in_channels, self.cfg.time_embedding_dim)?;
        let div = self.cfg.spatial_divisor();
        if !x.height().is_multiple_of(div) || !x.width().is_multiple_of(div) {
            return Err(CoreError::InvalidData(format!(
                "U-Net with {} levels needs height and width divisible by {div}, got {}x{}",
                self.cfg.encoder_channels.len(),
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    fn forward_impl(
        &self,
        x: &ImageBatch,
        t_enc: &TimeEncoding,
        want_cache: bool,
    ) -> Result<(ImageBatch, Option<UNetCache>)> {
        self.check_input(x, t_enc)?;
        let levels = self.enc.len();
        let batch = x.batch();
        let t_rows = t_enc.as_slice().to_vec();

        let mut enc_caches = Vec::new();
        let mut skips: Vec<ImageBatch> = Vec::with_capacity(levels);
        let mut h = x.clone();
        for (i, stage) in self.enc.iter().enumerate() {
            let (out, cache) = stage.forward(&h, &t_rows, batch, 0, want_cache);
            if let Some(c) = cache {
                enc_caches.push(c);
            }
            h = if i < levels - 1 {
                avgpool2_forward(&out)
            } else {
                out.clone()
            };
            skips.push(out);
        }

        let mut bneck_caches = Vec::new();
        for conv in &self.bneck {
            let pre = conv.forward(&h);
            let out = silu_forward(&pre);
            if want_cache {
                bneck_caches.push(ConvCache { x: h, pre });
            }
            h = out;
        }

        let mut dec_caches = Vec::new();
        for (j, lvl) in (0..levels).rev().enumerate() {
            if lvl < levels - 1 {
                h = upsample2_forward(&h);
            }
            let split = h.channels();
            let cat = ImageBatch::concat_channels(&h, &skips[lvl])?;
            let (out, cache) = self.dec[j].forward(&cat, &t_rows, batch, split, want_cache);
            if let Some(c) = cache {
                dec_caches.push(c);
            }
            h = out;
        }

        let out = self.head.forward(&h);
        let cache = want_cache.then_some(UNetCache {
            t_rows,
            batch,
            enc: enc_caches,
            bneck: bneck_caches,
            dec: dec_caches,
            head_x: h,
        });
        Ok((out, cache))
    }

    /// Inference pass; records nothing.
    pub fn forward(&self, x: &ImageBatch, t_enc: &TimeEncoding) -> Result<ImageBatch> {
        Ok(self.forward_impl(x, t_enc, false)?.0)
    }

    /// Training pass returning the activations the backward pass needs.
    pub fn forward_train(
        &self,
        x: &ImageBatch,
        t_enc: &TimeEncoding,
    ) -> Result<(ImageBatch, UNetCache)> {
        let (out, cache) = self.forward_impl(x, t_enc, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    /// Accumulates parameter gradients from the output gradient.
    pub fn backward(&mut self, cache: &UNetCache, grad_out: &ImageBatch) {
        let levels = self.enc.len();
        let t_rows = &cache.t_rows;
        let batch = cache.batch;

        let mut g = self.head.backward(&cache.head_x, grad_out);

        let mut skip_grads: Vec<Option<ImageBatch>> = vec![None; levels];
        for j in (0..levels).rev() {
            let lvl = levels - 1 - j;
            g = self.dec[j].backward(&cache.dec[j], &g, t_rows, batch);
            let split = cache.dec[j].concat_split;
            let g_deep = g.channel_range(0, split);
            let g_skip = g.channel_range(split, g.channels() - split);
            skip_grads[lvl] = Some(g_skip);
            g = if lvl < levels - 1 {
                upsample2_backward(&g_deep)
            } else {
                g_deep
            };
        }

        for (conv, cc) in self.bneck.iter_mut().zip(&cache.bneck).rev() {
            g = silu_backward(&cc.pre, &g);
            g = conv.backward(&cc.x, &g);
        }

        for lvl in (0..levels).rev() {
            let g_total = match &skip_grads[lvl] {
                Some(sg) => g.zip(sg, |a, b| a + b),
                None => g,
            };
            g = self.enc[lvl].backward(&cache.enc[lvl], &g_total, t_rows, batch);
            if lvl > 0 {
                g = avgpool2_backward(&g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.enc {
            s.zero_grad();
        }
        for c in &mut self.bneck {
            c.zero_grad();
        }
        for s in &mut self.dec {
            s.zero_grad();
        }
        self.head.zero_grad();
    }

    /// Visits every parameter together with its gradient buffer, in a
    /// fixed traversal order. The optimizer, checkpoints, and the
    /// finite-difference tests all rely on this order being stable.
    pub fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_>) {
        fn conv(name: String, c: &mut Conv2d, f: &mut ParamVisitorMut<'_>) {
            f(
                &format!("{name}.weight"),
                &[c.out_ch, c.in_ch, c.k, c.k],
                &mut c.w,
                &mut c.gw,
            );
            f(&format!("{name}.bias"), &[c.out_ch], &mut c.b, &mut c.gb);
        }
        fn dense(name: String, d: &mut Dense, f: &mut ParamVisitorMut<'_>) {
            f(
                &format!("{name}.weight"),
                &[d.out_dim, d.in_dim],
                &mut d.w,
                &mut d.gw,
            );
            f(&format!("{name}.bias"), &[d.out_dim], &mut d.b, &mut d.gb);
        }
        fn stage(name: &str, s: &mut Stage, f: &mut ParamVisitorMut<'_>) {
            conv(format!("{name}.conv1"), &mut s.conv1, f);
            conv(format!("{name}.conv2"), &mut s.conv2, f);
            conv(format!("{name}.shortcut"), &mut s.shortcut, f);
            dense(format!("{name}.time"), &mut s.time, f);
            if let Some(a) = &mut s.attn {
                let d = a.dim;
                f(&format!("{name}.attn.wq"), &[d, d], &mut a.wq, &mut a.gwq);
                f(&format!("{name}.attn.wk"), &[d, d], &mut a.wk, &mut a.gwk);
                f(&format!("{name}.attn.wv"), &[d, d], &mut a.wv, &mut a.gwv);
                f(&format!("{name}.attn.wo"), &[d, d], &mut a.wo, &mut a.gwo);
            }
        }
        for (i, s) in self.enc.iter_mut().enumerate() {
            stage(&format!("enc{i}"), s, f);
        }
        for (i, c) in self.bneck.iter_mut().enumerate() {
            conv(format!("bneck{i}"), c, f);
        }
        for (i, s) in self.dec.iter_mut().enumerate() {
            stage(&format!("dec{i}"), s, f);
        }
        conv("head".into(), &mut self.head, f);
    }

    /// Read-only parameter walk in the same order as
    /// [`UNet::visit_params_mut`].
    pub fn visit_params(&self, f: &mut ParamVisitor<'_>) {
        fn conv(name: String, c: &Conv2d, f: &mut ParamVisitor<'_>) {
            f(&format!("{name}.weight"), &[c.out_ch, c.in_ch, c.k, c.k], &c.w);
            f(&format!("{name}.bias"), &[c.out_ch], &c.b);
        }
        fn dense(name: String, d: &Dense, f: &mut ParamVisitor<'_>) {
            f(&format!("{name}.weight"), &[d.out_dim, d.in_dim], &d.w);
            f(&format!("{name}.bias"), &[d.out_dim], &d.b);
        }
        fn stage(name: &str, s: &Stage, f: &mut ParamVisitor<'_>) {
            conv(format!("{name}.conv1"), &s.conv1, f);
            conv(format!("{name}.conv2"), &s.conv2, f);
            conv(format!("{name}.shortcut"), &s.shortcut, f);
            dense(format!("{name}.time"), &s.time, f);
            if let Some(a) = &s.attn {
                let d = a.dim;
                f(&format!("{name}.attn.wq"), &[d, d], &a.wq);
                f(&format!("{name}.attn.wk"), &[d, d], &a.wk);
                f(&format!("{name}.attn.wv"), &[d, d], &a.wv);
                f(&format!("{name}.attn.wo"), &[d, d], &a.wo);
            }
        }
        for (i, s) in self.enc.iter().enumerate() {
            stage(&format!("enc{i}"), s, f);
        }
        for (i, c) in self.bneck.iter().enumerate() {
            conv(format!("bneck{i}"), c, f);
        }
        for (i, s) in self.dec.iter().enumerate() {
            stage(&format!("dec{i}"), s, f);
        }
        conv("head".into(), &self.head, f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, data| n += data.len());
        n
    }

    /// Order-independent checksum of all parameter bits.
    pub fn param_checksum(&self) -> u64 {
        let mut acc: u64 = 0;
        self.visit_params(&mut |_, _, data| {
            for v in data {
                acc = acc.wrapping_add(v.to_bits().wrapping_mul(0x9e37_79b9_7f4a_7c15));
            }
        });
        acc
    }
}

impl NoisePredictor for UNet {
    fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn out_channels(&self) -> usize {
        self.cfg.out_channels
    }

    fn time_encoding_dim(&self) -> usize {
        self.cfg.time_embedding_dim
    }

    fn predict(&self, x: &ImageBatch, t_enc: &TimeEncoding) -> Result<ImageBatch> {
        self.forward(x, t_enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc;

    fn toy_config() -> UNetConfig {
        UNetConfig {
            in_channels: 2,
            out_channels: 1,
            encoder_channels: vec![4, 6],
            bottleneck_channels: vec![8],
            attention_flags: vec![false, false],
            time_embedding_dim: 8,
        }
    }

    #[test]
    fn default_config_shape_contract() {
        let unet = build_unet(UNetConfig::default(), 7).unwrap();
        let mut rng = Rng::seed_from(3);
        let x = ImageBatch::standard_normal(&mut rng, 2, 2, 32, 32);
        let t_enc = posenc::encode(&[5, 9], 256).unwrap();
        let y = unet.forward(&x, &t_enc).unwrap();
        assert_eq!(y.dims(), (2, 1, 32, 32));
    }

    #[test]
    fn forward_is_deterministic() {
        let unet = build_unet(toy_config(), 11).unwrap();
        let mut rng = Rng::seed_from(4);
        let x = ImageBatch::standard_normal(&mut rng, 1, 2, 8, 8);
        let t_enc = posenc::encode(&[3], 8).unwrap();
        let a = unet.forward(&x, &t_enc).unwrap();
        let b = unet.forward(&x, &t_enc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_preserves_shape() {
        let mut cfg = toy_config();
        cfg.attention_flags = vec![true, false];
        let unet = build_unet(cfg, 11).unwrap();
        let mut rng = Rng::seed_from(4);
        let x = ImageBatch::standard_normal(&mut rng, 1, 2, 8, 8);
        let t_enc = posenc::encode(&[3], 8).unwrap();
        let y = unet.forward(&x, &t_enc).unwrap();
        assert_eq!(y.dims(), (1, 1, 8, 8));
    }

    #[test]
    fn rejects_non_divisible_input() {
        let unet = build_unet(toy_config(), 11).unwrap();
        let x = ImageBatch::zeros(1, 2, 7, 7);
        let t_enc = posenc::encode(&[3], 8).unwrap();
        let err = unet.forward(&x, &t_enc).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("divisible"), "{msg}");
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let unet = build_unet(toy_config(), 11).unwrap();
        let x = ImageBatch::zeros(1, 3, 8, 8);
        let t_enc = posenc::encode(&[3], 8).unwrap();
        assert!(unet.forward(&x, &t_enc).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = toy_config();
        cfg.attention_flags = vec![false];
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config();
        cfg.time_embedding_dim = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config();
        cfg.encoder_channels.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_unet(toy_config(), 5).unwrap();
        let b = build_unet(toy_config(), 5).unwrap();
        assert_eq!(a.param_checksum(), b.param_checksum());
        let c = build_unet(toy_config(), 6).unwrap();
        assert_ne!(a.param_checksum(), c.param_checksum());
    }

    fn mse_loss_and_grad(y: &ImageBatch, target: &ImageBatch) -> (f64, ImageBatch) {
        let n = y.len() as f64;
        let loss = y.mean_squared_error(target);
        let grad = y.zip(target, |a, b| 2.0 * (a - b) / n);
        (loss, grad)
    }

    /// Full-model gradient check: analytic gradients against central
    /// finite differences on parameters spread across every layer kind.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut cfg = toy_config();
        cfg.attention_flags = vec![false, true];
        let mut unet = build_unet(cfg, 13).unwrap();
        let mut rng = Rng::seed_from(17);
        let x = ImageBatch::standard_normal(&mut rng, 2, 2, 8, 8);
        let target = ImageBatch::standard_normal(&mut rng, 2, 1, 8, 8);
        let t_enc = posenc::encode(&[2, 5], 8).unwrap();

        unet.zero_grad();
        let (y, cache) = unet.forward_train(&x, &t_enc).unwrap();
        let (_, grad) = mse_loss_and_grad(&y, &target);
        unet.backward(&cache, &grad);

        // Collect analytic gradients keyed by (param index, offset).
        let mut analytic: Vec<(String, usize, f64)> = Vec::new();
        unet.visit_params_mut(&mut |name, _, data, grad| {
            // Probe a few offsets per tensor.
            for off in [0, data.len() / 2, data.len() - 1] {
                analytic.push((String::from(name), off, grad[off]));
            }
        });
        assert!(analytic.len() >= 10);

        let h = 1e-5;
        for (name, off, g_analytic) in analytic {
            let set = |unet: &mut UNet, delta: f64| {
                unet.visit_params_mut(&mut |n, _, data, _| {
                    if n == name {
                        data[off] += delta;
                    }
                });
            };
            set(&mut unet, h);
            let lp = {
                let y = unet.forward(&x, &t_enc).unwrap();
                mse_loss_and_grad(&y, &target).0
            };
            set(&mut unet, -2.0 * h);
            let lm = {
                let y = unet.forward(&x, &t_enc).unwrap();
                mse_loss_and_grad(&y, &target).0
            };
            set(&mut unet, h);
            let fd = (lp - lm) / (2.0 * h);
            // The absolute floor keeps finite-difference rounding noise
            // (~1e-11 at this loss scale and step) out of the comparison
            // for near-zero gradients.
            let denom = fd.abs().max(g_analytic.abs()).max(1e-6);
            assert!(
                (fd - g_analytic).abs() / denom < 1e-3,
                "{name}[{off}]: fd {fd} vs analytic {g_analytic}"
            );
        }
    }

    #[test]
    fn param_traversal_orders_agree() {
        let mut unet = build_unet(toy_config(), 5).unwrap();
        let mut names_mut = Vec::new();
        unet.visit_params_mut(&mut |name, _, _, _| names_mut.push(String::from(name)));
        let mut names_ref = Vec::new();
        unet.visit_params(&mut |name, _, _| names_ref.push(String::from(name)));
        assert_eq!(names_mut, names_ref);
        assert!(names_mut.contains(&String::from("enc0.conv1.weight")));
        assert!(names_mut.contains(&String::from("head.bias")));
    }
}
