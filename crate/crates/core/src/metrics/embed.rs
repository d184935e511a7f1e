//! Feature embedders for the Fréchet distance.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;

use crate::data::read_tensor_file;
use crate::error::{format_err, shape_err, Error, Result};
use crate::rng::{mix_seed, stream};
use crate::tensor::Tensor;

/// Side of the pooled grid used by [`Embedder::RawPool`].
pub const POOL_SIDE: usize = 8;
pub const RAND_PROJ_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Embedder {
    /// Average-pool to 8×8 per channel and flatten.
    RawPool,
    /// Fixed seeded random projection of the centred pixels, then tanh.
    RandProj { seed: u64 },
    /// Precomputed features: a tensor file holding `originals` and
    /// `reconstructions`, each `(N, d)`.
    External { path: PathBuf },
}

impl fmt::Display for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Embedder::RawPool => write!(f, "raw_pool"),
            Embedder::RandProj { seed } => write!(f, "rand_proj:{seed}"),
            Embedder::External { path } => write!(f, "external:{}", path.display()),
        }
    }
}

impl FromStr for Embedder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "raw_pool" {
            return Ok(Embedder::RawPool);
        }
        if let Some(seed) = s.strip_prefix("rand_proj:") {
            let seed = seed
                .parse()
                .map_err(|e| Error::Config(format!("embedder {s:?}: bad seed: {e}")))?;
            return Ok(Embedder::RandProj { seed });
        }
        if let Some(path) = s.strip_prefix("external:").filter(|p| !p.is_empty()) {
            return Ok(Embedder::External { path: path.into() });
        }
        Err(Error::Config(format!(
            "unknown embedder {s:?}; expected raw_pool, rand_proj:SEED or external:PATH"
        )))
    }
}

/// Which half of a comparison is being embedded; selects the entry read
/// from an external feature file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageSet {
    Originals,
    Reconstructions,
}

impl ImageSet {
    pub fn entry_name(self) -> &'static str {
        match self {
            ImageSet::Originals => "originals",
            ImageSet::Reconstructions => "reconstructions",
        }
    }
}

/// Features `(N, d)` for images `(N, 3, h, w)`.
pub fn embed(images: &Tensor<f32>, embedder: &Embedder, set: ImageSet) -> Result<Tensor<f64>> {
    let [n, c, h, w] = images.dims4()?;
    match embedder {
        Embedder::RawPool => raw_pool(images, n, c, h, w),
        Embedder::RandProj { seed } => rand_proj(images, n, c * h * w, *seed),
        Embedder::External { path } => {
            let entries = read_tensor_file::<f64>(path)?;
            let name = set.entry_name();
            let Some((_, t)) = entries.into_iter().find(|(k, _)| k == name) else {
                return format_err(0, format!("{}: no {name:?} entry", path.display()));
            };
            match *t.shape() {
                [rows, _] if rows == n => Ok(t),
                _ => format_err(
                    0,
                    format!("{}: {name:?} is {:?}, expected ({n}, d)", path.display(), t.shape()),
                ),
            }
        }
    }
}

fn raw_pool(images: &Tensor<f32>, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor<f64>> {
    if h < POOL_SIDE || w < POOL_SIDE {
        return shape_err(format!("raw_pool needs images of at least {POOL_SIDE}x{POOL_SIDE}, got {h}x{w}"));
    }
    // bin i covers rows [floor(i·h/8), ceil((i+1)·h/8))
    let bounds = |i: usize, extent: usize| (i * extent / POOL_SIDE, ((i + 1) * extent).div_ceil(POOL_SIDE));
    let px = images.data();
    let mut out = Vec::with_capacity(n * c * POOL_SIDE * POOL_SIDE);
    for k in 0..n {
        for ch in 0..c {
            let plane = &px[(k * c + ch) * h * w..][..h * w];
            for by in 0..POOL_SIDE {
                let (y0, y1) = bounds(by, h);
                for bx in 0..POOL_SIDE {
                    let (x0, x1) = bounds(bx, w);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        s += plane[y * w + x0..y * w + x1].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    Tensor::new(&[n, c * POOL_SIDE * POOL_SIDE], out)
}

fn rand_proj(images: &Tensor<f32>, n: usize, dim: usize, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = stream(mix_seed(seed, &[0xe3bed, dim as u64]));
    let bound = 3f64.sqrt();
    let weights: Vec<f64> = (0..dim * RAND_PROJ_DIM).map(|_| rng.gen_range(-bound..bound)).collect();
    let scale = 1.0 / (dim as f64).sqrt();
    let px = images.data();
    let mut out = Vec::with_capacity(n * RAND_PROJ_DIM);
    for k in 0..n {
        let x: Vec<f64> = px[k * dim..][..dim].iter().map(|&v| 2.0 * v as f64 - 1.0).collect();
        for j in 0..RAND_PROJ_DIM {
            let row = &weights[j * dim..][..dim];
            let s: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            out.push((s * scale).tanh());
        }
    }
    Tensor::new(&[n, RAND_PROJ_DIM], out)
}
