use crate::error::{shape_err, Result};
use crate::tensor::{BackwardCtx, Function, Graph, Scalar, Tensor, Var};

use super::{init_uniform, Ctx, ParamId, ParamKind, ParamStore};

fn dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (&[batch, fin], &[fout, fin_w]) = (x.shape(), w.shape()) else {
        return shape_err(format!(
            "linear expects x (batch, in) and w (out, in), got {:?} and {:?}",
            x.shape(),
            w.shape()
        ));
    };
    if fin != fin_w || b.shape() != [fout] {
        return shape_err(format!(
            "linear: x {:?}, w {:?}, b {:?} disagree",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    Ok((batch, fin, fout))
}

/// `x·wᵀ + b` with `x: (batch, in)`, `w: (out, in)`, `b: (out)`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fin, fout) = dims(x, w, b)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = Vec::with_capacity(batch * fout);
    for r in 0..batch {
        let xr = &xd[r * fin..][..fin];
        for o in 0..fout {
            let wr = &wd[o * fin..][..fin];
            let dot = xr.iter().zip(wr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            y.push(dot + bd[o]);
        }
    }
    Tensor::new(&[batch, fout], y)
}

struct LinearFn;

impl<T: Scalar> Function<T> for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let (batch, fin) = (x.shape()[0], x.shape()[1]);
        let fout = w.shape()[0];
        let (xd, wd, gy) = (x.data(), w.data(), ctx.grad.data());
        let gx = ctx.needs[0]
            .then(|| {
                let mut gx = vec![T::zero(); batch * fin];
                for r in 0..batch {
                    let row = &mut gx[r * fin..][..fin];
                    for o in 0..fout {
                        let g = gy[r * fout + o];
                        for (acc, &wv) in row.iter_mut().zip(&wd[o * fin..][..fin]) {
                            *acc = *acc + g * wv;
                        }
                    }
                }
                Tensor::new(x.shape(), gx)
            })
            .transpose()?;
        let gw = ctx.needs[1]
            .then(|| {
                let mut gw = vec![T::zero(); fout * fin];
                for o in 0..fout {
                    let row = &mut gw[o * fin..][..fin];
                    for r in 0..batch {
                        let g = gy[r * fout + o];
                        for (acc, &xv) in row.iter_mut().zip(&xd[r * fin..][..fin]) {
                            *acc = *acc + g * xv;
                        }
                    }
                }
                Tensor::new(w.shape(), gw)
            })
            .transpose()?;
        let gb = ctx.needs[2]
            .then(|| {
                let gb = (0..fout)
                    .map(|o| (0..batch).fold(T::zero(), |acc, r| acc + gy[r * fout + o]))
                    .collect();
                Tensor::new(&[fout], gb)
            })
            .transpose()?;
        Ok(vec![gx, gw, gb])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.apply(LinearFn, &[x, w, b], y))
    }
}

/// Fully connected layer.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        seed: u64,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let w = init_uniform(&[out_features, in_features], in_features, seed, &wname)?;
        let weight = store.add(&wname, w, ParamKind::Trainable)?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_features]), ParamKind::Trainable)?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.graph.linear(x, w, b)
    }
}
