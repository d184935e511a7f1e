//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major 32×32.

use std::fs;
use std::path::Path;

use crate::error::{arg_err, format_err, Result};
use crate::tensor::Tensor;

use super::Dataset;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_BYTES: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: u8 = 10;

/// Parses one batch file's contents. `first_record` only shifts the record
/// index quoted in errors.
pub fn parse_cifar10(bytes: &[u8], first_record: usize) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let whole = bytes.len() / CIFAR_RECORD_BYTES;
        let expected = (whole.max(1)) * CIFAR_RECORD_BYTES;
        return format_err(
            (whole * CIFAR_RECORD_BYTES) as u64,
            format!(
                "CIFAR-10 file must be a positive multiple of {CIFAR_RECORD_BYTES} bytes: \
                 expected {expected} bytes, got {}",
                bytes.len()
            ),
        );
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] >= CIFAR_CLASSES {
            return format_err(
                (i * CIFAR_RECORD_BYTES) as u64,
                format!("record {}: label {} exceeds 9", first_record + i, rec[0]),
            );
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::new(&[n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    Dataset::new(images, Some(labels))
}

/// Loads and concatenates batch files in the given order.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return arg_err("no CIFAR-10 files given");
    }
    let mut parts = Vec::with_capacity(paths.len());
    let mut seen = 0;
    for p in paths {
        let bytes = fs::read(p.as_ref())?;
        let d = parse_cifar10(&bytes, seen).map_err(|e| in_file(e, p.as_ref()))?;
        seen += d.len();
        parts.push(d);
    }
    Dataset::concat(&parts)
}

fn in_file(e: crate::Error, path: &Path) -> crate::Error {
    match e {
        crate::Error::Format { offset, message } => crate::Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// Byte value for a pixel in [0, 1]: `floor(v·255 + 0.5)` clamped.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Serializes images `(N, 3, 32, 32)` and labels back to the batch format.
pub fn encode_cifar10(images: &Tensor<f32>, labels: &[u8]) -> Result<Vec<u8>> {
    let [n, c, h, w] = images.dims4()?;
    if (c, h, w) != (3, CIFAR_SIDE, CIFAR_SIDE) {
        return crate::error::shape_err(format!("CIFAR-10 images are (N, 3, 32, 32), got {:?}", images.shape()));
    }
    if labels.len() != n {
        return arg_err(format!("{n} images but {} labels", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= CIFAR_CLASSES) {
        return arg_err(format!("label {l} exceeds 9"));
    }
    let mut out = Vec::with_capacity(n * CIFAR_RECORD_BYTES);
    for (i, &label) in labels.iter().enumerate() {
        out.push(label);
        out.extend(images.data()[i * CIFAR_PIXELS..][..CIFAR_PIXELS].iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

/// Standard batch file names found in an extracted `cifar-10-batches-bin`.
pub fn cifar10_files(dir: &Path, train: bool) -> Vec<std::path::PathBuf> {
    if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}
