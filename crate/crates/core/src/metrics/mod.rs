//! Reconstruction quality: SSIM, MS-SSIM and the Fréchet distance between
//! Gaussian fits of image features.

mod embed;
mod frechet;
mod ssim;

pub use embed::{embed, Embedder, ImageSet, POOL_SIDE, RAND_PROJ_DIM};
pub use frechet::{frechet_distance, gaussian_stats, GaussianStats, EIGEN_CLIP, NEGATIVE_SLACK};
pub use ssim::{
    batch_ssim, gaussian_taps, ms_ssim, ms_ssim_scales, ms_ssim_weights, ms_ssim_with_scales, ssim, SsimConfig,
    MS_SSIM_WEIGHTS,
};

use crate::error::Result;
use crate::tensor::Tensor;

/// Fréchet distance between the embedded originals and reconstructions.
pub fn image_frechet(originals: &Tensor<f32>, reconstructions: &Tensor<f32>, embedder: &Embedder) -> Result<f64> {
    let a = gaussian_stats(&embed(originals, embedder, ImageSet::Originals)?)?;
    let b = gaussian_stats(&embed(reconstructions, embedder, ImageSet::Reconstructions)?)?;
    frechet_distance(&a, &b)
}
