//! Versioned binary checkpoints.
//!
//! Byte layout (all integers little-endian, all floats IEEE 754 f64 LE):
//!
//! ```text
//! magic            8  bytes  b"DDPMCKPT"
//! version          u32       currently 1
//! epochs_completed u32
//! -- architecture echo --
//! in_channels      u32
//! out_channels     u32
//! n_levels         u32
//! encoder_channels u32 * n_levels
//! n_bottleneck     u32
//! bottleneck       u32 * n_bottleneck
//! attention_flags  u8  * n_levels          (0 or 1)
//! time_embed_dim   u32
//! -- parameters --
//! n_params         u64
//! per parameter:
//!   name_len u16, name utf-8 bytes,
//!   n_dims   u8,  dims u32 * n_dims,
//!   data     f64 * product(dims)
//! -- optimizer state --
//! steps            u64
//! n_tensors        u64                      (equals n_params)
//! per tensor:
//!   len u64, first moment f64 * len, second moment f64 * len
//! ```
//!
//! The parameter order is the model's fixed traversal order; names are
//! written for self-description and verified on load.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use ddpm_core::denoiser::{build_unet, UNet, UNetConfig};
use ddpm_core::trainer::AdamW;

const MAGIC: &[u8; 8] = b"DDPMCKPT";
const VERSION: u32 = 1;

/// A checkpoint read back into memory.
pub struct Checkpoint {
    pub epochs_completed: u32,
    pub config: UNetConfig,
    pub model: UNet,
    pub opt_steps: u64,
    pub opt_m: Vec<Vec<f64>>,
    pub opt_v: Vec<Vec<f64>>,
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises model parameters and optimizer state.
pub fn save(path: &Path, model: &UNet, optimizer: &AdamW, epochs_completed: u32) -> Result<()> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    write_u32(&mut out, VERSION);
    write_u32(&mut out, epochs_completed);

    write_u32(&mut out, cfg.in_channels as u32);
    write_u32(&mut out, cfg.out_channels as u32);
    write_u32(&mut out, cfg.encoder_channels.len() as u32);
    for &c in &cfg.encoder_channels {
        write_u32(&mut out, c as u32);
    }
    write_u32(&mut out, cfg.bottleneck_channels.len() as u32);
    for &c in &cfg.bottleneck_channels {
        write_u32(&mut out, c as u32);
    }
    for &f in &cfg.attention_flags {
        out.push(f as u8);
    }
    write_u32(&mut out, cfg.time_embedding_dim as u32);

    let mut n_params: u64 = 0;
    model.visit_params(&mut |_, _, _| n_params += 1);
    write_u64(&mut out, n_params);
    model.visit_params(&mut |name, shape, data| {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(shape.len() as u8);
        for &d in shape {
            write_u32(&mut out, d as u32);
        }
        write_f64s(&mut out, data);
    });

    let (steps, m, v) = optimizer.state();
    write_u64(&mut out, steps);
    write_u64(&mut out, m.len() as u64);
    for (mt, vt) in m.iter().zip(v) {
        write_u64(&mut out, mt.len() as u64);
        write_f64s(&mut out, mt);
        write_f64s(&mut out, vt);
    }

    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&out))
        .with_context(|| format!("cannot write checkpoint {}", path.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot finalize checkpoint {}", path.display()))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!("checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Reads a checkpoint back, rebuilding the model from its architecture
/// echo and filling in the stored parameters and optimizer moments.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let mut r = Reader { buf: &raw, pos: 0 };

    if r.take(8)? != MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version} (expected {VERSION})");
    }
    let epochs_completed = r.u32()?;

    let in_channels = r.u32()? as usize;
    let out_channels = r.u32()? as usize;
    let n_levels = r.u32()? as usize;
    let mut encoder_channels = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        encoder_channels.push(r.u32()? as usize);
    }
    let n_bneck = r.u32()? as usize;
    let mut bottleneck_channels = Vec::with_capacity(n_bneck);
    for _ in 0..n_bneck {
        bottleneck_channels.push(r.u32()? as usize);
    }
    let mut attention_flags = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        attention_flags.push(r.u8()? != 0);
    }
    let time_embedding_dim = r.u32()? as usize;
    let config = UNetConfig {
        in_channels,
        out_channels,
        encoder_channels,
        bottleneck_channels,
        attention_flags,
        time_embedding_dim,
    };

    let n_params = r.u64()? as usize;
    let mut params: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .context("invalid parameter name encoding")?
            .to_owned();
        let n_dims = r.u8()? as usize;
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(r.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let data = r.f64s(len)?;
        params.insert(name, (dims, data));
    }

    let opt_steps = r.u64()?;
    let n_tensors = r.u64()? as usize;
    let mut opt_m = Vec::with_capacity(n_tensors);
    let mut opt_v = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let len = r.u64()? as usize;
        opt_m.push(r.f64s(len)?);
        opt_v.push(r.f64s(len)?);
    }

    // Seed value is irrelevant: every parameter is overwritten below.
    let mut model = build_unet(config.clone(), 0)?;
    let mut fill_error = None;
    model.visit_params_mut(&mut |name, shape, data, _| {
        if fill_error.is_some() {
            return;
        }
        match params.get(name) {
            Some((dims, values)) if dims == shape && values.len() == data.len() => {
                data.copy_from_slice(values);
            }
            Some((dims, _)) => {
                fill_error = Some(format!(
                    "parameter {name} has shape {dims:?} in the checkpoint but {shape:?} in the model"
                ));
            }
            None => fill_error = Some(format!("checkpoint is missing parameter {name}")),
        }
    });
    if let Some(msg) = fill_error {
        bail!("{msg}");
    }

    Ok(Checkpoint {
        epochs_completed,
        config,
        model,
        opt_steps,
        opt_m,
        opt_v,
    })
}

/// Names the first architecture field that differs between a checkpoint
/// echo and the run configuration, if any.
pub fn config_mismatch(checkpoint: &UNetConfig, config: &UNetConfig) -> Option<&'static str> {
    if checkpoint.in_channels != config.in_channels {
        Some("in_channels")
    } else if checkpoint.out_channels != config.out_channels {
        Some("out_channels")
    } else if checkpoint.encoder_channels != config.encoder_channels {
        Some("encoder_channels")
    } else if checkpoint.bottleneck_channels != config.bottleneck_channels {
        Some("bottleneck_channels")
    } else if checkpoint.attention_flags != config.attention_flags {
        Some("attention_flags")
    } else if checkpoint.time_embedding_dim != config.time_embedding_dim {
        Some("time_embedding_dim")
    } else {
        None
    }
}
