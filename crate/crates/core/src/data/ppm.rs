//! Binary PPM (P6) image grids.

use std::fs;
use std::path::Path;

use crate::error::{arg_err, format_err, Result};
use crate::tensor::Tensor;

use super::quantize;

/// Nearest-square column count: `ceil(sqrt(n))`.
pub fn grid_columns(n: usize) -> usize {
    let mut c = (n as f64).sqrt() as usize;
    while c * c < n {
        c += 1;
    }
    c.max(1)
}

/// Lays out `images: (N, 3, h, w)` row by row in a grid of `cols` columns
/// (nearest square when `None`). Unfilled cells stay black.
pub fn encode_ppm_grid(images: &Tensor<f32>, cols: Option<usize>) -> Result<Vec<u8>> {
    let [n, c, h, w] = images.dims4()?;
    if c != 3 {
        return crate::error::shape_err(format!("PPM grids need 3 channels, got {c}"));
    }
    let cols = cols.unwrap_or_else(|| grid_columns(n));
    if cols == 0 {
        return arg_err("grid needs at least one column");
    }
    let rows = n.div_ceil(cols);
    let (width, height) = (cols * w, rows * h);
    let header = format!("P6\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + width * height * 3);
    out.extend_from_slice(header.as_bytes());
    let body = out.len();
    out.resize(body + width * height * 3, 0);
    let px = images.data();
    for k in 0..n {
        let (gr, gc) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                let dst = body + ((gr * h + y) * width + gc * w + x) * 3;
                for ch in 0..3 {
                    out[dst + ch] = quantize(px[((k * 3 + ch) * h + y) * w + x]);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ppm_grid(images: &Tensor<f32>, cols: Option<usize>, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm_grid(images, cols)?)?;
    Ok(())
}

/// A decoded P6 image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Interleaved RGB samples, one byte each.
    pub pixels: Vec<u8>,
}

/// Parses a binary PPM with 8-bit samples. Header comments are allowed.
pub fn parse_ppm(bytes: &[u8]) -> Result<Ppm> {
    let mut pos = 0;
    if bytes.get(..2) != Some(b"P6") {
        return format_err(0, "not a binary PPM (missing P6)");
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (i, what) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return format_err(pos as u64, format!("expected {what}"));
        }
        if pos - start > 9 {
            return format_err(start as u64, format!("{what} is too large"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text.parse().expect("at most 9 digits");
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return format_err(pos as u64, "expected one whitespace byte after maxval");
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return format_err(pos as u64, "zero image extent");
    }
    if maxval == 0 || maxval > 255 {
        return format_err(pos as u64, format!("maxval {maxval} is not an 8-bit range"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .filter(|&n| n <= bytes.len());
    let Some(need) = need else {
        return format_err(pos as u64, format!("{width}x{height} does not fit the file"));
    };
    if bytes.len() - pos != need {
        return format_err(
            pos as u64,
            format!("expected {need} payload bytes, got {}", bytes.len() - pos),
        );
    }
    Ok(Ppm {
        width,
        height,
        maxval: maxval as u16,
        pixels: bytes[pos..].to_vec(),
    })
}
