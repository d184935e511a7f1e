//! Learnable layers: convolution, transposed convolution, batch
//! normalization and fully connected, plus the named parameter store they
//! register into.

mod batchnorm;
mod conv;
pub(crate) mod kernels;
mod linear;

use crate::error::{config_err, shape_err, Result};
use crate::rng::mix_seed;
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use batchnorm::{BatchNorm2d, BnUpdate, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
pub use conv::{conv2d, conv_transpose2d, conv_transpose2d_sized, Conv2d, ConvTranspose2d};
pub use kernels::{conv_out_extent, conv_transpose_out_extent};
pub use linear::{linear, Linear};

/// Forward-pass mode. Only batch norm and latent noise look at it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State such as running statistics; saved but never differentiated.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        if self.find(name).is_some() {
            return config_err(format!("duplicate parameter name {name:?}"));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            kind,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return shape_err(format!(
                "parameter {:?} has shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].kind == ParamKind::Trainable)
            .map(ParamId)
            .collect()
    }

    /// Total scalar count of trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Records every entry as a graph leaf. Trainable entries are tracked
    /// when `track` is set; buffers never are.
    pub fn bind(&self, graph: &mut Graph<T>, track: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| graph.leaf(e.value.clone(), track && e.kind == ParamKind::Trainable))
            .collect()
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) -> Result<()> {
        for u in updates {
            let m = T::of(u.momentum);
            let keep = T::one() - m;
            let rm = self.get(u.running_mean).clone();
            let rv = self.get(u.running_var).clone();
            let mean = Tensor::new(rm.shape(), u.batch_mean.clone())?;
            let var = Tensor::new(rv.shape(), u.batch_var.clone())?;
            self.set(u.running_mean, rm.zip_map(&mean, |r, b| keep * r + m * b)?)?;
            self.set(u.running_var, rv.zip_map(&var, |r, b| keep * r + m * b)?)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
        }
    }
}

/// Everything a layer needs during one forward pass: the graph, the graph
/// handle of every parameter, the mode, and a sink for batch-norm running
/// statistic updates (applied by the caller after the step).
pub struct Ctx<'g, T: Scalar> {
    pub graph: &'g mut Graph<T>,
    pub params: Vec<Var>,
    pub mode: Mode,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'g, T: Scalar> Ctx<'g, T> {
    pub fn new(graph: &'g mut Graph<T>, params: Vec<Var>, mode: Mode) -> Self {
        Ctx {
            graph,
            params,
            mode,
            bn_updates: Vec::new(),
        }
    }

    /// Binds every store entry (see [`ParamStore::bind`]).
    pub fn bind(graph: &'g mut Graph<T>, store: &ParamStore<T>, track: bool, mode: Mode) -> Self {
        let params = store.bind(graph, track);
        Self::new(graph, params, mode)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.params[id.0]
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Weight initialization: uniform on `[-b, b)` with `b = 1/sqrt(fan_in)`,
/// keyed by the run seed and the parameter name so values do not depend on
/// construction order.
pub fn init_uniform<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, mix_seed(seed, &[name_hash(name)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1]), ParamKind::Trainable).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1]), ParamKind::Buffer).is_err());
    }

    #[test]
    fn set_keeps_shape() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("a", Tensor::zeros(&[2]), ParamKind::Trainable).unwrap();
        assert!(s.set(id, Tensor::zeros(&[3])).is_err());
        s.set(id, Tensor::full(&[2], 1.0)).unwrap();
        assert_eq!(s.get(id).data(), &[1.0, 1.0]);
    }

    #[test]
    fn init_bound_and_determinism() {
        let a: Tensor<f64> = init_uniform(&[8, 4, 3, 3], 4 * 9, 5, "w").unwrap();
        let b: Tensor<f64> = init_uniform(&[8, 4, 3, 3], 4 * 9, 5, "w").unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 1.0 / 6.0));
        let c: Tensor<f64> = init_uniform(&[8, 4, 3, 3], 4 * 9, 5, "w2").unwrap();
        assert_ne!(a, c);
    }
}
