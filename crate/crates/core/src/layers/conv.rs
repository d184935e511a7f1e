use crate::error::{config_err, shape_err, Result};
use crate::tensor::{BackwardCtx, Function, Graph, Scalar, Tensor, Var};

use super::kernels::{
    add_channel_bias, channel_sums, conv_out_extent, conv_transpose_out_extent, corr_adjoint,
    corr_forward, corr_weight_grad, Geom,
};
use super::{init_uniform, Ctx, ParamId, ParamKind, ParamStore};

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, ch: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [ch] => shape_err(format!(
            "bias shape {:?} does not match {ch} output channels",
            b.shape()
        )),
        _ => Ok(()),
    }
}

fn conv_geom(xs: [usize; 4], ws: &[usize], stride: usize, pad: usize) -> Result<Geom> {
    let [n, c, h, w] = xs;
    let &[cout, cin, kh, kw] = ws else {
        return shape_err(format!("conv weight must be rank 4, got {ws:?}"));
    };
    if cin != c {
        return shape_err(format!("input has {c} channels, weight expects {cin}"));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_extent(h, kh, stride, pad),
        conv_out_extent(w, kw, stride, pad),
    ) else {
        return shape_err(format!(
            "{h}x{w} input admits no {kh}x{kw} window at stride {stride}, padding {pad}"
        ));
    };
    Ok(Geom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
    })
}

/// Geometry of the correlation whose adjoint is this transposed convolution.
fn conv_t_geom(xs: [usize; 4], ws: &[usize], stride: usize, pad: usize) -> Result<Geom> {
    let [n, c, h, w] = xs;
    let &[cin_t, cout_t, kh, kw] = ws else {
        return shape_err(format!("transposed conv weight must be rank 4, got {ws:?}"));
    };
    if cin_t != c {
        return shape_err(format!("input has {c} channels, weight expects {cin_t}"));
    }
    let (Some(oh), Some(ow)) = (
        conv_transpose_out_extent(h, kh, stride, pad),
        conv_transpose_out_extent(w, kw, stride, pad),
    ) else {
        return shape_err(format!(
            "transposed conv of {h}x{w} with {kh}x{kw}, stride {stride}, padding {pad} is empty"
        ));
    };
    Ok(Geom {
        n,
        cin: cout_t,
        h: oh,
        w: ow,
        cout: cin_t,
        kh,
        kw,
        stride,
        pad,
        oh: h,
        ow: w,
    })
}

/// Cross-correlation (no kernel flip) with symmetric zero padding.
/// `x: (n, cin, h, w)`, `w: (cout, cin, kh, kw)`, `b: (cout)`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x.dims4()?, w.shape(), stride, pad)?;
    check_bias(b, g.cout)?;
    let mut y = corr_forward(x.data(), w.data(), &g);
    if let Some(b) = b {
        add_channel_bias(&mut y, b.data(), g.n, g.oh * g.ow);
    }
    Tensor::new(&[g.n, g.cout, g.oh, g.ow], y)
}

/// Adjoint of [`conv2d`] with the same weight, stride and padding, plus bias.
/// `x: (n, cin, h, w)`, `w: (cin, cout, kh, kw)`, `b: (cout)`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_t_geom(x.dims4()?, w.shape(), stride, pad)?;
    check_bias(b, g.cin)?;
    let mut y = corr_adjoint(x.data(), w.data(), &g);
    if let Some(b) = b {
        add_channel_bias(&mut y, b.data(), g.n, g.h * g.w);
    }
    Tensor::new(&[g.n, g.cin, g.h, g.w], y)
}

/// [`conv_transpose2d`] onto an explicit `(h, w)` extent: the full adjoint
/// of the [`conv2d`] that maps an `(h, w)` input to `x`'s extent, including
/// trailing rows a strided window reaches but the default extent drops.
pub fn conv_transpose2d_sized<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    extent: (usize, usize),
) -> Result<Tensor<T>> {
    let [n, c, xh, xw] = x.dims4()?;
    let &[cin_t, cout_t, kh, kw] = w.shape() else {
        return shape_err(format!("transposed conv weight must be rank 4, got {:?}", w.shape()));
    };
    if cin_t != c {
        return shape_err(format!("input has {c} channels, weight expects {cin_t}"));
    }
    let (h, wd) = extent;
    if conv_out_extent(h, kh, stride, pad) != Some(xh) || conv_out_extent(wd, kw, stride, pad) != Some(xw) {
        return shape_err(format!(
            "a {h}x{wd} convolution input does not map to {xh}x{xw} with {kh}x{kw}, stride {stride}, padding {pad}"
        ));
    }
    let g = Geom {
        n,
        cin: cout_t,
        h,
        w: wd,
        cout: cin_t,
        kh,
        kw,
        stride,
        pad,
        oh: xh,
        ow: xw,
    };
    check_bias(b, g.cin)?;
    let mut y = corr_adjoint(x.data(), w.data(), &g);
    if let Some(b) = b {
        add_channel_bias(&mut y, b.data(), g.n, g.h * g.w);
    }
    Tensor::new(&[g.n, g.cin, g.h, g.w], y)
}

struct Conv2dFn {
    geom: Geom,
}

impl<T: Scalar> Function<T> for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geom;
        let gy = ctx.grad.data();
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let mut out = vec![
            ctx.needs[0]
                .then(|| Tensor::new(x.shape(), corr_adjoint(gy, w.data(), g)))
                .transpose()?,
            ctx.needs[1]
                .then(|| Tensor::new(w.shape(), corr_weight_grad(x.data(), gy, g)))
                .transpose()?,
        ];
        if ctx.inputs.len() == 3 {
            out.push(
                ctx.needs[2]
                    .then(|| Tensor::new(&[g.cout], channel_sums(gy, g.n, g.cout, g.oh * g.ow)))
                    .transpose()?,
            );
        }
        Ok(out)
    }
}

struct ConvTranspose2dFn {
    geom: Geom,
}

impl<T: Scalar> Function<T> for ConvTranspose2dFn {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geom;
        let gy = ctx.grad.data();
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let mut out = vec![
            ctx.needs[0]
                .then(|| Tensor::new(x.shape(), corr_forward(gy, w.data(), g)))
                .transpose()?,
            ctx.needs[1]
                .then(|| Tensor::new(w.shape(), corr_weight_grad(gy, x.data(), g)))
                .transpose()?,
        ];
        if ctx.inputs.len() == 3 {
            out.push(
                ctx.needs[2]
                    .then(|| Tensor::new(&[g.cin], channel_sums(gy, g.n, g.cin, g.h * g.w)))
                    .transpose()?,
            );
        }
        Ok(out)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = conv_geom(self.value(x).dims4()?, self.value(w).shape(), stride, pad)?;
        let y = conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.apply(Conv2dFn { geom }, &inputs, y))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = conv_t_geom(self.value(x).dims4()?, self.value(w).shape(), stride, pad)?;
        let y = conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.apply(ConvTranspose2dFn { geom }, &inputs, y))
    }
}

fn check_hyper(kind: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Result<()> {
    if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
        return config_err(format!(
            "{kind}: channels, kernel and stride must be positive \
             (in {in_ch}, out {out_ch}, kernel {kernel}, stride {stride})"
        ));
    }
    Ok(())
}

/// Square-kernel 2-D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        check_hyper("conv2d", in_ch, out_ch, kernel, stride)?;
        let wname = format!("{name}.weight");
        let w = init_uniform(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, seed, &wname)?;
        let weight = store.add(&wname, w, ParamKind::Trainable)?;
        let bias = bias
            .then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[out_ch]), ParamKind::Trainable))
            .transpose()?;
        Ok(Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_extent(&self, input: usize) -> Option<usize> {
        conv_out_extent(input, self.kernel, self.stride, self.padding)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        ctx.graph.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Square-kernel transposed convolution layer (weight `(in, out, k, k)`).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        check_hyper("conv_transpose2d", in_ch, out_ch, kernel, stride)?;
        let wname = format!("{name}.weight");
        // fan-in taken from weight dim 1, as the common frameworks do
        let w = init_uniform(&[in_ch, out_ch, kernel, kernel], out_ch * kernel * kernel, seed, &wname)?;
        let weight = store.add(&wname, w, ParamKind::Trainable)?;
        let bias = bias
            .then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[out_ch]), ParamKind::Trainable))
            .transpose()?;
        Ok(ConvTranspose2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_extent(&self, input: usize) -> Option<usize> {
        conv_transpose_out_extent(input, self.kernel, self.stride, self.padding)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        ctx.graph.conv_transpose2d(x, w, b, self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::<f64>::uniform(&[2, 1, 3, 3], -1.0, 1.0, 1).unwrap();
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        assert_eq!(conv2d(&x, &w, Some(&t(&[1], vec![0.0])), 1, 0).unwrap(), x);
        assert_eq!(conv_transpose2d(&x, &w, None, 1, 0).unwrap(), x);
    }

    #[test]
    fn two_by_two_all_ones() {
        let x = t(&[1, 1, 2, 2], vec![1., 2., 3., 4.]);
        let w = t(&[1, 1, 2, 2], vec![1.; 4]);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn transpose_scatters_kernel() {
        let x = t(&[1, 1, 1, 1], vec![1.0]);
        let w = t(&[1, 1, 3, 3], vec![1.; 9]);
        let y = conv_transpose2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
        let w = Tensor::<f32>::zeros(&[3, 2, 5, 5]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        assert!(conv2d(&x, &w, Some(&Tensor::zeros(&[2])), 1, 0).is_err());
        assert!(conv_transpose2d(&x, &w, None, 1, 0).is_err());
    }
}
