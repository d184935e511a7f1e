//! Differentiable elementwise and shape operations on [`Graph`] values.

use crate::error::{shape_err, Result};

use super::{BackwardCtx, Function, Graph, Scalar, Tensor, Var};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

struct AddFn;
impl<T: Scalar> Function<T> for AddFn {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])
    }
}

struct SubFn;
impl<T: Scalar> Function<T> for SubFn {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(ctx.grad.clone()), Some(ctx.grad.scale(-T::one()))])
    }
}

struct MulFn;
impl<T: Scalar> Function<T> for MulFn {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        Ok(vec![
            ctx.needs[0].then(|| ctx.grad.mul(b)).transpose()?,
            ctx.needs[1].then(|| ctx.grad.mul(a)).transpose()?,
        ])
    }
}

/// y = a·x + b
struct AffineFn<T>(T);
impl<T: Scalar> Function<T> for AffineFn<T> {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(ctx.grad.scale(self.0))])
    }
}

struct TanhFn;
impl<T: Scalar> Function<T> for TanhFn {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let g = ctx.grad.zip_map(ctx.output, |g, y| g * (T::one() - y * y))?;
        Ok(vec![Some(g)])
    }
}

struct SigmoidFn;
impl<T: Scalar> Function<T> for SigmoidFn {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let g = ctx.grad.zip_map(ctx.output, |g, y| g * y * (T::one() - y))?;
        Ok(vec![Some(g)])
    }
}

pub(crate) fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// Sum (or mean, when `scale` is 1/n) of every element.
struct ReduceFn<T>(T);
impl<T: Scalar> Function<T> for ReduceFn<T> {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let g = ctx.grad.data()[0] * self.0;
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape(), g))])
    }
}

struct RollFn {
    shift: i64,
    axis: usize,
}
impl<T: Scalar> Function<T> for RollFn {
    fn name(&self) -> &'static str {
        "roll"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(ctx.grad.roll(-self.shift, self.axis)?)])
    }
}

struct ConcatFn {
    axis: usize,
}
impl<T: Scalar> Function<T> for ConcatFn {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let mut lo = 0;
        let mut out = Vec::with_capacity(ctx.inputs.len());
        for (p, &need) in ctx.inputs.iter().zip(&ctx.needs) {
            let hi = lo + p.shape()[self.axis];
            out.push(need.then(|| ctx.grad.narrow(self.axis, lo, hi)).transpose()?);
            lo = hi;
        }
        Ok(out)
    }
}

struct NarrowFn {
    axis: usize,
    lo: usize,
}
impl<T: Scalar> Function<T> for NarrowFn {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let g = Tensor::zeros(ctx.inputs[0].shape()).assign(self.axis, self.lo, ctx.grad)?;
        Ok(vec![Some(g)])
    }
}

struct AssignFn {
    axis: usize,
    lo: usize,
    width: usize,
}
impl<T: Scalar> Function<T> for AssignFn {
    fn name(&self) -> &'static str {
        "assign"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        let (axis, lo, hi) = (self.axis, self.lo, self.lo + self.width);
        let base = ctx.needs[0]
            .then(|| {
                let hole = Tensor::zeros(ctx.inputs[1].shape());
                ctx.grad.assign(axis, lo, &hole)
            })
            .transpose()?;
        let value = ctx.needs[1]
            .then(|| ctx.grad.narrow(axis, lo, hi))
            .transpose()?;
        Ok(vec![base, value])
    }
}

struct ReshapeFn;
impl<T: Scalar> Function<T> for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Grads<T> {
        Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape())?)])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.apply(AddFn, &[a, b], y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.apply(SubFn, &[a, b], y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.apply(MulFn, &[a, b], y))
    }

    /// `scale·x + offset` elementwise.
    pub fn affine(&mut self, x: Var, scale: T, offset: T) -> Var {
        let y = self.value(x).map(|v| v * scale + offset);
        self.apply(AffineFn(scale), &[x], y)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.affine(x, T::one(), s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        self.apply(TanhFn, &[x], y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.apply(SigmoidFn, &[x], y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(T::of(self.value(x).sum()));
        self.apply(ReduceFn(T::one()), &[x], y)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.numel() as f64;
        let y = Tensor::scalar(T::of(v.sum() / n));
        self.apply(ReduceFn(T::of(1.0 / n)), &[x], y)
    }

    pub fn roll(&mut self, x: Var, shift: i64, axis: usize) -> Result<Var> {
        let y = self.value(x).roll(shift, axis)?;
        Ok(self.apply(RollFn { shift, axis }, &[x], y))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat(&values, axis)?;
        Ok(self.apply(ConcatFn { axis }, parts, y))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, lo: usize, hi: usize) -> Result<Var> {
        let y = self.value(x).narrow(axis, lo, hi)?;
        Ok(self.apply(NarrowFn { axis, lo }, &[x], y))
    }

    /// Functional assignment: copy of `x` whose range starting at `lo` on
    /// `axis` is `v`. Gradient flows to `x` outside the range and to `v` inside.
    pub fn assign(&mut self, x: Var, axis: usize, lo: usize, v: Var) -> Result<Var> {
        let y = self.value(x).assign(axis, lo, self.value(v))?;
        let width = self.value(v).shape()[axis];
        Ok(self.apply(AssignFn { axis, lo, width }, &[x, v], y))
    }

    pub fn slice_channels(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        if self.value(x).rank() < 2 {
            return shape_err("slice_channels needs rank >= 2");
        }
        self.narrow(x, 1, lo, hi)
    }

    pub fn assign_channels(&mut self, x: Var, lo: usize, hi: usize, v: Var) -> Result<Var> {
        let vs = self.value(v).shape();
        if lo >= hi || vs.len() < 2 || vs[1] != hi - lo {
            return shape_err(format!("assign_channels [{lo}, {hi}) with value {vs:?}"));
        }
        self.assign(x, 1, lo, v)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.apply(ReshapeFn, &[x], y))
    }
}
