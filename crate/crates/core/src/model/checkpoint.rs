//! Checkpoint files.
//!
//! Layout: magic `SGCK`, u32 version, u32 parameter count, the parameter
//! entries, then a trailer of u32 step counter, u32 optimizer entry count
//! and those entries, and finally the model config as length-prefixed text.
//! Every integer is little-endian.

use std::fs;
use std::path::Path;

use crate::error::{format_err, Result};
use crate::tensor::io::{read_entry, write_entry, write_string, write_u32, ByteReader};
use crate::tensor::{Scalar, Tensor};

use super::{SimpleGrowth, SimpleGrowthConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: SimpleGrowth<T>,
    /// Optimizer state as named tensors (empty when absent).
    pub optimizer: Vec<(String, Tensor<T>)>,
    pub step: u32,
}

pub fn encode_checkpoint<T: Scalar>(
    model: &SimpleGrowth<T>,
    optimizer: &[(String, Tensor<T>)],
    step: u32,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    write_u32(&mut out, CHECKPOINT_VERSION);
    let entries = model.params().entries();
    write_u32(&mut out, entries.len() as u32);
    for e in entries {
        write_entry(&mut out, &e.name, &e.value);
    }
    write_u32(&mut out, step);
    write_u32(&mut out, optimizer.len() as u32);
    for (name, t) in optimizer {
        write_entry(&mut out, name, t);
    }
    write_string(&mut out, &model.config().to_text());
    out
}

/// Parses a checkpoint. Nothing is returned unless the whole file is valid
/// and matches the architecture its config describes.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return format_err(at, format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let count = r.u32("entry count")? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.offset();
        let (name, t) = read_entry::<T>(&mut r)?;
        params.push((at, name, t));
    }
    let step = r.u32("step counter")?;
    let opt_count = r.u32("optimizer entry count")? as usize;
    let mut optimizer = Vec::with_capacity(opt_count.min(4096));
    for _ in 0..opt_count {
        optimizer.push(read_entry::<T>(&mut r)?);
    }
    let at = r.offset();
    let text = r.string("config text")?;
    if !r.is_at_end() {
        return format_err(r.offset(), format!("{} trailing bytes", r.remaining()));
    }
    let config = SimpleGrowthConfig::from_text(&text)
        .or_else(|e| format_err(at, format!("config section: {e}")))?;

    let end = r.offset();
    let stored: u128 = params.iter().map(|(_, _, t)| t.numel() as u128).sum();
    if stored != config.stored_numel() {
        return format_err(
            end,
            format!(
                "checkpoint holds {stored} parameter values, the configured model has {}",
                config.stored_numel()
            ),
        );
    }
    let mut model = SimpleGrowth::<T>::new(config, 0)?;
    if params.len() != model.params().len() {
        return format_err(
            end,
            format!(
                "checkpoint holds {} parameters, the model has {}",
                params.len(),
                model.params().len()
            ),
        );
    }
    let mut seen = vec![false; model.params().len()];
    for (at, name, t) in params {
        let Some(id) = model.params().find(&name) else {
            return format_err(at, format!("unknown parameter {name:?}"));
        };
        if std::mem::replace(&mut seen[id.0], true) {
            return format_err(at, format!("parameter {name:?} appears twice"));
        }
        let want = model.params().get(id).shape().to_vec();
        if t.shape() != want.as_slice() {
            return format_err(at, format!("parameter {name:?} has shape {:?}, expected {want:?}", t.shape()));
        }
        model.params_mut().set(id, t)?;
    }
    Ok(Checkpoint { model, optimizer, step })
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &SimpleGrowth<T>,
    optimizer: &[(String, Tensor<T>)],
    step: u32,
) -> Result<()> {
    let bytes = encode_checkpoint(model, optimizer, step);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}
