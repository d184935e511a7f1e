//! SimpleGrowth: a convolutional autoencoder whose encoder and decoder blocks
//! propagate signals with a growth-function update.

pub mod config;
pub mod data;
pub mod error;
pub mod growth;
pub mod rng;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
