//! Adam with bias correction.

use crate::error::{arg_err, format_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers aligned with a parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Steps taken so far.
    pub t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    /// Buffers as `adam.m.NAME` / `adam.v.NAME` entries.
    pub fn to_named(&self, names: &[&str]) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * names.len());
        for (prefix, bufs) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (name, t) in names.iter().zip(bufs) {
                out.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        out
    }

    /// Inverse of [`AdamState::to_named`]; every buffer must be present with
    /// the shape of its parameter.
    pub fn from_named(entries: &[(String, Tensor<T>)], names: &[&str], params: &[Tensor<T>], t: u32) -> Result<Self> {
        let find = |key: String, like: &Tensor<T>| -> Result<Tensor<T>> {
            match entries.iter().find(|(k, _)| *k == key) {
                Some((_, v)) if v.shape() == like.shape() => Ok(v.clone()),
                Some((_, v)) => format_err(0, format!("optimizer entry {key:?} has shape {:?}", v.shape())),
                None => format_err(0, format!("optimizer entry {key:?} missing")),
            }
        };
        let mut state = AdamState::zeros(params);
        for (i, (name, p)) in names.iter().zip(params).enumerate() {
            state.m[i] = find(format!("adam.m.{name}"), p)?;
            state.v[i] = find(format!("adam.v.{name}"), p)?;
        }
        state.t = t;
        Ok(state)
    }
}

/// One Adam update of `params` in place. Arithmetic runs in f64.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return arg_err(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return arg_err(format!(
                "parameter {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for i in 0..params.len() {
        let n = params[i].numel();
        let (mut p, mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let g = grads[i].data()[j].widen();
            let mj = b1 * state.m[i].data()[j].widen() + (1.0 - b1) * g;
            let vj = b2 * state.v[i].data()[j].widen() + (1.0 - b2) * g * g;
            let step = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            p.push(T::of(params[i].data()[j].widen() - step));
            m.push(T::of(mj));
            v.push(T::of(vj));
        }
        let shape = params[i].shape().to_vec();
        params[i] = Tensor::new(&shape, p)?;
        state.m[i] = Tensor::new(&shape, m)?;
        state.v[i] = Tensor::new(&shape, v)?;
    }
    Ok(())
}
