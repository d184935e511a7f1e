//! Raw tensor files: magic `SGTN`, u32 version, u32 entry count, then
//! entries encoded exactly like checkpoint parameters.

use std::fs;
use std::path::Path;

use crate::error::{format_err, shape_err, Result};
use crate::tensor::io::{read_entry, write_entry, write_u32, ByteReader};
use crate::tensor::{Scalar, Tensor};

use super::Dataset;

pub const TENSOR_FILE_MAGIC: &[u8; 4] = b"SGTN";
pub const TENSOR_FILE_VERSION: u32 = 1;

pub fn encode_tensor_file<T: Scalar>(entries: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_FILE_MAGIC);
    write_u32(&mut out, TENSOR_FILE_VERSION);
    write_u32(&mut out, entries.len() as u32);
    for (name, t) in entries {
        write_entry(&mut out, name, t);
    }
    out
}

pub fn decode_tensor_file<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TENSOR_FILE_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != TENSOR_FILE_VERSION {
        return format_err(at, format!("unsupported version {version}, expected {TENSOR_FILE_VERSION}"));
    }
    let count = r.u32("entry count")? as usize;
    let mut out: Vec<(String, Tensor<T>)> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.offset();
        let (name, t) = read_entry(&mut r)?;
        if out.iter().any(|(n, _)| *n == name) {
            return format_err(at, format!("duplicate entry {name:?}"));
        }
        out.push((name, t));
    }
    if !r.is_at_end() {
        return format_err(r.offset(), format!("{} trailing bytes", r.remaining()));
    }
    Ok(out)
}

pub fn write_tensor_file<T: Scalar>(path: &Path, entries: &[(String, Tensor<T>)]) -> Result<()> {
    fs::write(path, encode_tensor_file(entries))?;
    Ok(())
}

pub fn read_tensor_file<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    decode_tensor_file(&fs::read(path)?)
}

/// Loads the `images` entry `(N, 3, S, S)` with values in [0, 1] and the
/// optional `labels` entry `(N)`.
pub fn load_image_tensor(path: &Path) -> Result<Dataset> {
    let entries = read_tensor_file::<f32>(path)?;
    let find = |n: &str| entries.iter().find(|(name, _)| name == n).map(|(_, t)| t);
    let Some(images) = find("images") else {
        return shape_err(format!("{}: no \"images\" entry", path.display()));
    };
    if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return shape_err(format!("{}: image values must lie in [0, 1]", path.display()));
    }
    let labels = find("labels")
        .map(|l| l.data().iter().map(|&v| v as u8).collect::<Vec<u8>>());
    Dataset::new(images.clone(), labels)
}
