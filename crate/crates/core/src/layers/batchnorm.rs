use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{BackwardCtx, Function, Graph, Scalar, Tensor, Var};

use super::{Ctx, Mode, ParamId, ParamKind, ParamStore};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Batch statistics from one training-mode forward, waiting to be folded
/// into the running estimates with [`ParamStore::apply_bn_updates`].
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Scalar> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<T>,
    /// Unbiased (divisor m − 1) batch variance.
    pub batch_var: Vec<T>,
    pub momentum: f64,
}

struct BnTrainFn<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: [usize; 4],
}

impl<T: Scalar> Function<T> for BnTrainFn<T> {
    fn name(&self) -> &'static str {
        "batch_norm_train"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let [n, c, h, w] = self.dims;
        let plane = h * w;
        let m = (n * plane) as f64;
        let gy = ctx.grad.data();
        let gamma = ctx.inputs[1].data();
        let mut gx = vec![T::zero(); gy.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for (&g, &xh) in gy[base..base + plane].iter().zip(&self.xhat[base..base + plane]) {
                    sum_g += g.widen();
                    sum_gx += (g * xh).widen();
                }
            }
            ggamma[ch] = T::of(sum_gx);
            gbeta[ch] = T::of(sum_g);
            let k = gamma[ch] * self.inv_std[ch];
            let mean_g = T::of(sum_g / m);
            let mean_gx = T::of(sum_gx / m);
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    gx[i] = k * (gy[i] - mean_g - self.xhat[i] * mean_gx);
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(&self.dims, gx)?),
            Some(Tensor::new(&[c], ggamma)?),
            Some(Tensor::new(&[c], gbeta)?),
        ])
    }
}

struct BnEvalFn<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: [usize; 4],
}

impl<T: Scalar> Function<T> for BnEvalFn<T> {
    fn name(&self) -> &'static str {
        "batch_norm_eval"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let [n, c, h, w] = self.dims;
        let plane = h * w;
        let gy = ctx.grad.data();
        let gamma = ctx.inputs[1].data();
        let mut gx = vec![T::zero(); gy.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * self.inv_std[ch];
                let base = (b * c + ch) * plane;
                let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                for i in base..base + plane {
                    gx[i] = k * gy[i];
                    sg += gy[i].widen();
                    sgx += (gy[i] * self.xhat[i]).widen();
                }
                ggamma[ch] = ggamma[ch] + T::of(sgx);
                gbeta[ch] = gbeta[ch] + T::of(sg);
            }
        }
        Ok(vec![
            Some(Tensor::new(&self.dims, gx)?),
            Some(Tensor::new(&[c], ggamma)?),
            Some(Tensor::new(&[c], gbeta)?),
        ])
    }
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err(format!(
            "batch norm over {c} channels got gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

fn normalize<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let v = T::of((x[i].widen() - mean[ch]) * inv_std[ch]);
                xhat[i] = v;
                y[i] = gamma[ch] * v + beta[ch];
            }
        }
    }
    (xhat, y)
}

impl<T: Scalar> Graph<T> {
    /// Normalizes each channel over (batch, h, w) with batch statistics.
    /// Returns the output plus the batch mean and unbiased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let dims = self.value(x).dims4()?;
        let [n, c, h, w] = dims;
        check_affine(c, self.value(gamma), self.value(beta))?;
        let plane = h * w;
        let m = n * plane;
        if m < 2 {
            return arg_err(format!(
                "training-mode batch norm needs at least 2 values per channel, got {m}"
            ));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ch in 0..c {
            let vals = || (0..n).flat_map(move |b| xd[(b * c + ch) * plane..][..plane].iter());
            let mu = vals().map(|v| v.widen()).sum::<f64>() / m as f64;
            let ss = vals().map(|v| (v.widen() - mu).powi(2)).sum::<f64>();
            mean[ch] = mu;
            var[ch] = ss / m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, y) = normalize(
            xd,
            dims,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let batch_mean = mean.iter().map(|&v| T::of(v)).collect();
        let batch_var = var
            .iter()
            .map(|&v| T::of(v * m as f64 / (m - 1) as f64))
            .collect();
        let func = BnTrainFn {
            xhat,
            inv_std: inv_std.into_iter().map(T::of).collect(),
            dims,
        };
        let out = self.apply(func, &[x, gamma, beta], Tensor::from_parts(dims.to_vec(), y));
        Ok((out, batch_mean, batch_var))
    }

    /// Normalizes with fixed statistics; an affine map of `x`.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let c = dims[1];
        check_affine(c, self.value(gamma), self.value(beta))?;
        if mean.shape() != [c] || var.shape() != [c] {
            return shape_err("running statistics do not match channel count");
        }
        let mu: Vec<f64> = mean.data().iter().map(|v| v.widen()).collect();
        let inv_std: Vec<f64> = var
            .data()
            .iter()
            .map(|v| 1.0 / (v.widen().max(0.0) + eps).sqrt())
            .collect();
        let (xhat, y) = normalize(
            self.value(x).data(),
            dims,
            &mu,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let func = BnEvalFn {
            xhat,
            inv_std: inv_std.into_iter().map(T::of).collect(),
            dims,
        };
        Ok(self.apply(func, &[x, gamma, beta], Tensor::from_parts(dims.to_vec(), y)))
    }
}

/// 2-D batch normalization with learnable affine and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        eps: f64,
        momentum: f64,
    ) -> Result<Self> {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[channels], T::one()), ParamKind::Trainable)?;
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable)?;
        let running_mean = store.add(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer)?;
        let running_var = store.add(&format!("{name}.running_var"), Tensor::full(&[channels], T::one()), ParamKind::Buffer)?;
        Ok(BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            eps,
            momentum,
        })
    }

    /// Train mode normalizes with batch statistics and queues a running-stat
    /// update on `ctx`; eval mode uses the running statistics only.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) =
                    ctx.graph.batch_norm_train(x, gamma, beta, self.eps)?;
                ctx.bn_updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    batch_mean,
                    batch_var,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.graph.value(ctx.var(self.running_mean)).clone();
                let var = ctx.graph.value(ctx.var(self.running_var)).clone();
                ctx.graph.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}
