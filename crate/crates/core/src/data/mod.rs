//! Image datasets: CIFAR-10 ingestion, raw tensor files, seeded batching and
//! PPM grid output.

mod cifar;
mod ppm;
mod synthetic;
mod tensor_file;

use rand::seq::SliceRandom;

use crate::error::{arg_err, shape_err, Result};
use crate::rng::{mix_seed, stream};
use crate::tensor::Tensor;

pub use cifar::{
    cifar10_files, encode_cifar10, load_cifar10_bin, parse_cifar10, quantize, CIFAR_CLASSES, CIFAR_PIXELS,
    CIFAR_RECORD_BYTES, CIFAR_SIDE,
};
pub use ppm::{encode_ppm_grid, grid_columns, parse_ppm, write_ppm_grid, Ppm};
pub use synthetic::synthetic_cifar10;
pub use tensor_file::{
    decode_tensor_file, encode_tensor_file, load_image_tensor, read_tensor_file, write_tensor_file,
    TENSOR_FILE_MAGIC, TENSOR_FILE_VERSION,
};

/// Images `(N, 3, S, S)` in [0, 1], with optional class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Option<Vec<u8>>) -> Result<Self> {
        let [n, c, h, w] = images.dims4()?;
        if c != 3 || h != w {
            return shape_err(format!("images must be (N, 3, S, S), got {:?}", images.shape()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return shape_err(format!("{n} images but {} labels", labels.map_or(0, |l| l.len())));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Stacks the selected images into one batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        if indices.is_empty() {
            return arg_err("cannot gather an empty batch");
        }
        let [n, c, h, w] = self.images.dims4()?;
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= n {
                return arg_err(format!("image index {i} out of range for {n} images"));
            }
            data.extend_from_slice(&self.images.data()[i * per..][..per]);
        }
        Tensor::new(&[indices.len(), c, h, w], data)
    }

    /// The first `count` images.
    pub fn head(&self, count: usize) -> Result<Dataset> {
        if count == 0 || count > self.len() {
            return arg_err(format!("requested {count} images from a set of {}", self.len()));
        }
        Ok(Dataset {
            images: self.images.narrow(0, 0, count)?,
            labels: self.labels.as_ref().map(|l| l[..count].to_vec()),
        })
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let refs: Vec<&Tensor<f32>> = parts.iter().map(|d| &d.images).collect();
        let images = Tensor::concat(&refs, 0)?;
        let labels = parts
            .iter()
            .map(|d| d.labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Dataset::new(images, labels)
    }
}

/// Seeded per-epoch permutation of `0..n`, cut into batches. The final
/// short batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return arg_err("cannot batch an empty dataset");
    }
    if batch_size == 0 {
        return arg_err("batch_size must be positive");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(mix_seed(seed, &[0xba7c4, epoch])));
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Iterates one epoch of image batches.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<Tensor<f32>>> + '_> {
    let order = epoch_batches(dataset.len(), batch_size, seed, epoch)?;
    Ok(order.into_iter().map(move |idx| dataset.gather(&idx)))
}
