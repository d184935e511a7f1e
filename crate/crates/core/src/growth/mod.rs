//! Growth-function propagation blocks.
//!
//! A block first computes an environment tensor: the input is cyclically
//! rolled once per topology offset and each rolled copy goes through one
//! shared single-output convolution, giving `ENV: (B, Nj, H, W)`. The block
//! then evolves its input: a change detector looks at the leading "type"
//! channels together with `ENV` and emits a gate in (0, 1); the input is
//! resampled by the cell convolution (down for merge blocks, up for div
//! blocks); a "born" convolution proposes new content; the output is the
//! gate-weighted blend of the two, with channels 0..3 squashed by a sigmoid.

mod topology;

use crate::error::{config_err, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, ParamStore};
use crate::tensor::{Graph, Scalar, Var};

pub use topology::Topology;

/// Channels that receive the sigmoid clamp after every growth update.
pub const CLAMPED_CHANNELS: usize = 3;

/// Computes `ENV` for input `x: (B, C, H, W)`.
///
/// For offset `(right, up)` the input is rolled by `right` along width and
/// by `-up` along height, then `conv` (C → 1, size-preserving) is applied.
pub fn compenv<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: Var,
    topology: &Topology,
    conv: &Conv2d,
) -> Result<Var> {
    let [_, c, h, w] = ctx.graph.value(x).dims4()?;
    if conv.out_ch != 1 || conv.in_ch != c {
        return config_err(format!(
            "environment conv must map {c} channels to 1, maps {} to {}",
            conv.in_ch, conv.out_ch
        ));
    }
    if conv.out_extent(h) != Some(h) || conv.out_extent(w) != Some(w) {
        return config_err(format!(
            "environment conv (kernel {}, stride {}, padding {}) does not preserve {h}x{w}",
            conv.kernel, conv.stride, conv.padding
        ));
    }
    let (dx, dy) = topology.reach();
    if dx > w as u64 || dy > h as u64 {
        return config_err(format!(
            "topology reach ({dx}, {dy}) exceeds feature map {h}x{w}"
        ));
    }
    let mut channels = Vec::with_capacity(topology.len());
    for &(right, up) in topology.offsets() {
        let t = ctx.graph.roll(x, right, 3)?;
        let t = ctx.graph.roll(t, -up, 2)?;
        channels.push(conv.forward(ctx, t)?);
    }
    ctx.graph.concat(&channels, 1)
}

/// Steps 5 and 6 of the growth update:
/// `y = cell·(1 − change) + change·born`, then sigmoid on channels 0..3.
pub fn gated_update<T: Scalar>(g: &mut Graph<T>, cell: Var, change: Var, born: Var) -> Result<Var> {
    let keep = g.affine(change, -T::one(), T::one());
    let carried = g.mul(cell, keep)?;
    let grown = g.mul(change, born)?;
    let y = g.add(carried, grown)?;
    clamp_type_channels(g, y)
}

fn clamp_type_channels<T: Scalar>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let head = g.slice_channels(y, 0, CLAMPED_CHANNELS)?;
    let squashed = g.sigmoid(head);
    g.assign_channels(y, 0, CLAMPED_CHANNELS, squashed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthMode {
    /// Stride-2 convolutions; halves H and W.
    Merge,
    /// Stride-2 transposed convolutions; doubles H and W.
    Div,
}

#[derive(Clone, Debug)]
pub struct GrowthBlockConfig {
    pub mode: GrowthMode,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Leading input channels fed to the change detector with `ENV`.
    pub dtype_channels: usize,
    pub topology: Topology,
    /// Batch norm after the cell convolution (the cell conv then has no bias).
    pub batch_norm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub compenv_kernel: usize,
    pub born_kernel: usize,
}

impl GrowthBlockConfig {
    pub fn new(mode: GrowthMode, in_ch: usize, out_ch: usize) -> Self {
        GrowthBlockConfig {
            mode,
            in_ch,
            out_ch,
            dtype_channels: 3,
            topology: Topology::moore(),
            batch_norm: false,
            bn_eps: crate::layers::DEFAULT_BN_EPS,
            bn_momentum: crate::layers::DEFAULT_BN_MOMENTUM,
            compenv_kernel: 3,
            born_kernel: 3,
        }
    }
}

/// A 4×4, stride-2, padding-1 resampler; both variants map H to exactly H/2 or 2H.
#[derive(Clone, Debug)]
pub enum Resample {
    Down(Conv2d),
    Up(ConvTranspose2d),
}

const RESAMPLE_KERNEL: usize = 4;

impl Resample {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        mode: GrowthMode,
        in_ch: usize,
        out_ch: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        Ok(match mode {
            GrowthMode::Merge => Resample::Down(Conv2d::new(
                store, name, in_ch, out_ch, RESAMPLE_KERNEL, 2, 1, bias, seed,
            )?),
            GrowthMode::Div => Resample::Up(ConvTranspose2d::new(
                store, name, in_ch, out_ch, RESAMPLE_KERNEL, 2, 1, bias, seed,
            )?),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Resample::Down(c) => c.forward(ctx, x),
            Resample::Up(c) => c.forward(ctx, x),
        }
    }

    pub fn out_extent(&self, input: usize) -> Option<usize> {
        match self {
            Resample::Down(c) => c.out_extent(input),
            Resample::Up(c) => c.out_extent(input),
        }
    }

    pub fn bias(&self) -> Option<crate::layers::ParamId> {
        match self {
            Resample::Down(c) => c.bias,
            Resample::Up(c) => c.bias,
        }
    }
}

/// One PatternEncode (merge) or PatternDecode (div) block.
#[derive(Clone, Debug)]
pub struct GrowthBlock {
    pub config: GrowthBlockConfig,
    pub compenv_conv: Conv2d,
    pub change_det: Resample,
    pub cell: Resample,
    pub cell_bn: Option<BatchNorm2d>,
    pub born: Conv2d,
}

impl GrowthBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: GrowthBlockConfig,
        seed: u64,
    ) -> Result<Self> {
        let c = &config;
        if c.in_ch == 0 || c.out_ch == 0 {
            return config_err(format!("{name}: channel counts must be positive"));
        }
        if c.dtype_channels == 0 || c.dtype_channels > c.in_ch {
            return config_err(format!(
                "{name}: {} type channels do not fit {} input channels",
                c.dtype_channels, c.in_ch
            ));
        }
        if c.out_ch < CLAMPED_CHANNELS {
            return config_err(format!(
                "{name}: {} output channels, need at least {CLAMPED_CHANNELS}",
                c.out_ch
            ));
        }
        for (what, k) in [("environment", c.compenv_kernel), ("born", c.born_kernel)] {
            if k == 0 || k % 2 == 0 {
                return config_err(format!(
                    "{name}: {what} kernel {k} cannot preserve size (needs an odd kernel)"
                ));
            }
        }
        let nj = c.topology.len();
        let compenv_conv = Conv2d::new(
            store,
            &format!("{name}.compenv"),
            c.in_ch,
            1,
            c.compenv_kernel,
            1,
            c.compenv_kernel / 2,
            true,
            seed,
        )?;
        let change_det = Resample::new(
            store,
            &format!("{name}.change_det"),
            c.mode,
            c.dtype_channels + nj,
            c.out_ch,
            true,
            seed,
        )?;
        let cell = Resample::new(
            store,
            &format!("{name}.cell"),
            c.mode,
            c.in_ch,
            c.out_ch,
            !c.batch_norm,
            seed,
        )?;
        let cell_bn = c
            .batch_norm
            .then(|| BatchNorm2d::new(store, &format!("{name}.cell_bn"), c.out_ch, c.bn_eps, c.bn_momentum))
            .transpose()?;
        let born = Conv2d::new(
            store,
            &format!("{name}.born"),
            c.out_ch,
            c.out_ch,
            c.born_kernel,
            1,
            c.born_kernel / 2,
            true,
            seed,
        )?;
        Ok(GrowthBlock {
            config,
            compenv_conv,
            change_det,
            cell,
            cell_bn,
            born,
        })
    }

    /// Spatial extent of the block output for a given input extent.
    pub fn out_extent(&self, input: usize) -> Option<usize> {
        self.cell.out_extent(input)
    }

    pub fn compenv<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        compenv(ctx, x, &self.config.topology, &self.compenv_conv)
    }

    /// Evolves `x` given its environment.
    pub fn growth<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, env: Var) -> Result<Var> {
        let (change, cell, born) = self.branches(ctx, x, env)?;
        gated_update(ctx.graph, cell, change, born)
    }

    /// The gate, the resampled input, and the born proposal, before blending.
    pub fn branches<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        env: Var,
    ) -> Result<(Var, Var, Var)> {
        let xs = ctx.graph.value(x).dims4()?;
        let es = ctx.graph.value(env).dims4()?;
        if xs[1] != self.config.in_ch {
            return crate::error::shape_err(format!(
                "block expects {} input channels, got {}",
                self.config.in_ch, xs[1]
            ));
        }
        if es[0] != xs[0] || es[2..] != xs[2..] || es[1] != self.config.topology.len() {
            return crate::error::shape_err(format!(
                "environment {es:?} does not fit input {xs:?}"
            ));
        }
        let dtype = ctx.graph.slice_channels(x, 0, self.config.dtype_channels)?;
        let type_and_env = ctx.graph.concat(&[dtype, env], 1)?;
        let logits = self.change_det.forward(ctx, type_and_env)?;
        let change = ctx.graph.sigmoid(logits);
        let mut cell = self.cell.forward(ctx, x)?;
        if let Some(bn) = &self.cell_bn {
            cell = bn.forward(ctx, cell)?;
        }
        let born = self.born.forward(ctx, cell)?;
        let (cs, rs) = (ctx.graph.value(change).shape(), ctx.graph.value(cell).shape());
        if cs != rs || ctx.graph.value(born).shape() != rs {
            return config_err(format!(
                "gate {cs:?} and cell {rs:?} disagree; kernels do not line up"
            ));
        }
        Ok((change, cell, born))
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let env = self.compenv(ctx, x)?;
        self.growth(ctx, x, env)
    }
}

/// Depth block that keeps the spatial size without padding:
/// `tanh(conv(tanh(conv_transpose(x))))`, the transpose growing each extent
/// by `kernel − 1` and the convolution shrinking it back.
#[derive(Clone, Debug)]
pub struct ConvF {
    pub expand: ConvTranspose2d,
    pub shrink: Conv2d,
}

impl ConvF {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Self> {
        if stride != 1 || kernel == 0 {
            return config_err(format!(
                "{name}: size-preserving ConvF needs stride 1 and a positive kernel, \
                 got kernel {kernel}, stride {stride}"
            ));
        }
        let expand = ConvTranspose2d::new(store, &format!("{name}.expand"), in_ch, out_ch, kernel, 1, 0, true, seed)?;
        let shrink = Conv2d::new(store, &format!("{name}.shrink"), out_ch, out_ch, kernel, 1, 0, true, seed)?;
        Ok(ConvF { expand, shrink })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.expand.forward(ctx, x)?;
        let y = ctx.graph.tanh(y);
        let y = self.shrink.forward(ctx, y)?;
        Ok(ctx.graph.tanh(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Tensor;

    #[test]
    fn rejects_bad_block_configs() {
        let mut s = ParamStore::<f32>::new();
        let mut c = GrowthBlockConfig::new(GrowthMode::Merge, 2, 8);
        assert!(GrowthBlock::new(&mut s, "a", c.clone(), 0).is_err());
        c.in_ch = 4;
        c.out_ch = 2;
        assert!(GrowthBlock::new(&mut s, "b", c.clone(), 0).is_err());
        c.out_ch = 8;
        c.compenv_kernel = 4;
        assert!(matches!(
            GrowthBlock::new(&mut s, "c", c.clone(), 0),
            Err(crate::Error::Config(_))
        ));
        c.compenv_kernel = 3;
        assert!(GrowthBlock::new(&mut s, "d", c, 0).is_ok());
        assert!(ConvF::new(&mut s, "f", 4, 4, 3, 2, 0).is_err());
    }

    #[test]
    fn compenv_rejects_non_preserving_conv() {
        let mut s = ParamStore::<f32>::new();
        let conv = Conv2d::new(&mut s, "c", 2, 1, 3, 1, 0, true, 0).unwrap();
        let wide = Conv2d::new(&mut s, "w", 2, 2, 3, 1, 1, true, 0).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, &s, false, Mode::Eval);
        let x = ctx.graph.constant(Tensor::zeros(&[1, 2, 6, 6]));
        let topo = Topology::moore();
        assert!(matches!(compenv(&mut ctx, x, &topo, &conv), Err(crate::Error::Config(_))));
        assert!(matches!(compenv(&mut ctx, x, &topo, &wide), Err(crate::Error::Config(_))));
    }
}
