//! The SimpleGrowth autoencoder.
//!
//! Encoder: merge growth blocks (each followed by ConvF blocks), flatten,
//! a linear layer and tanh give the latent code; training adds uniform noise
//! to it. Decoder: a linear layer reshaped to the bottleneck, then per level
//! ConvF blocks and a div growth block. The last div block emits the three
//! image channels, so its sigmoid clamp doubles as the output activation.

mod checkpoint;

use crate::config::{render_kv, KvLine};
use crate::error::{arg_err, config_err, shape_err, Result};
use crate::growth::{ConvF, GrowthBlock, GrowthBlockConfig, GrowthMode, Topology};
use crate::layers::{Ctx, Linear, Mode, ParamStore, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

pub const IMAGE_CHANNELS: usize = 3;
const CONVF_KERNEL: usize = 3;
const MAX_WIDTH: usize = 1 << 16;
const MAX_IMAGE_SIZE: usize = 1 << 14;
const MAX_LATENT: usize = 1 << 20;
const MAX_CONVF: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SimpleGrowthConfig {
    /// Input images are `(3, S, S)`.
    pub image_size: usize,
    /// Channel widths per level, starting with the 3 image channels. The
    /// encoder merges `blocks[i] -> blocks[i+1]`; the decoder mirrors it.
    pub blocks: Vec<usize>,
    pub latent_dim: usize,
    pub dtype_channels: usize,
    pub topology: Topology,
    pub noise_radius: f64,
    pub convf_per_level: usize,
    pub bn_enabled: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for SimpleGrowthConfig {
    fn default() -> Self {
        Self::cifar32()
    }
}

/// Keys understood by [`SimpleGrowthConfig::set`], in echo order.
pub const MODEL_KEYS: [&str; 10] = [
    "image_size",
    "blocks",
    "latent_dim",
    "dtype_channels",
    "topology",
    "noise_radius",
    "convf_per_level",
    "bn_enabled",
    "bn_eps",
    "bn_momentum",
];

impl SimpleGrowthConfig {
    /// 32×32 CIFAR-10 architecture: 3→16→32→64, bottleneck 64×4×4, latent 240.
    pub fn cifar32() -> Self {
        SimpleGrowthConfig {
            image_size: 32,
            blocks: vec![3, 16, 32, 64],
            latent_dim: 240,
            dtype_channels: 3,
            topology: Topology::moore(),
            noise_radius: 0.1,
            convf_per_level: 1,
            bn_enabled: true,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// 64×64 variant with one extra 16-channel entry level.
    pub fn celeba64() -> Self {
        SimpleGrowthConfig {
            image_size: 64,
            blocks: vec![3, 16, 16, 32, 64],
            ..Self::cifar32()
        }
    }

    /// Small 32×32 model for smoke training: 3→8→16, latent 32.
    pub fn smoke() -> Self {
        SimpleGrowthConfig {
            blocks: vec![3, 8, 16],
            latent_dim: 32,
            ..Self::cifar32()
        }
    }

    /// 8×8 model small enough for exhaustive finite differences.
    pub fn gradcheck() -> Self {
        SimpleGrowthConfig {
            image_size: 8,
            blocks: vec![3, 4, 6],
            latent_dim: 8,
            ..Self::cifar32()
        }
    }

    pub fn levels(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    /// `(channels, side)` of the encoder output.
    pub fn bottleneck(&self) -> (usize, usize) {
        let side = self.image_size >> self.levels();
        (*self.blocks.last().unwrap_or(&0), side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() < 2 {
            return config_err("blocks needs at least two widths");
        }
        if self.blocks[0] != IMAGE_CHANNELS {
            return config_err(format!(
                "blocks must start with {IMAGE_CHANNELS} image channels, got {}",
                self.blocks[0]
            ));
        }
        if let Some(&w) = self.blocks.iter().find(|&&w| !(IMAGE_CHANNELS..=MAX_WIDTH).contains(&w)) {
            return config_err(format!("block width {w} outside {IMAGE_CHANNELS}..={MAX_WIDTH}"));
        }
        if self.image_size > MAX_IMAGE_SIZE || self.latent_dim > MAX_LATENT {
            return config_err(format!(
                "image_size {} or latent_dim {} exceeds the supported maximum ({MAX_IMAGE_SIZE}, {MAX_LATENT})",
                self.image_size, self.latent_dim
            ));
        }
        if self.dtype_channels == 0 || self.blocks.iter().any(|&w| w < self.dtype_channels) {
            return config_err(format!(
                "dtype_channels {} must be positive and fit every block width",
                self.dtype_channels
            ));
        }
        let scale = 1usize.checked_shl(self.levels() as u32).unwrap_or(0);
        if scale == 0 || !self.image_size.is_multiple_of(scale) || self.image_size / scale < 2 {
            return config_err(format!(
                "image_size {} with {} levels leaves no bottleneck of at least 2x2",
                self.image_size,
                self.levels()
            ));
        }
        let (dx, dy) = self.topology.reach();
        if dx.max(dy) > (self.image_size / scale) as u64 {
            return config_err(format!(
                "topology reach {} exceeds the {}x{} bottleneck",
                dx.max(dy),
                self.image_size / scale,
                self.image_size / scale
            ));
        }
        if self.convf_per_level > MAX_CONVF {
            return config_err(format!("convf_per_level {} exceeds {MAX_CONVF}", self.convf_per_level));
        }
        if self.latent_dim == 0 {
            return config_err("latent_dim must be positive");
        }
        if !(self.noise_radius.is_finite() && self.noise_radius >= 0.0) {
            return config_err(format!("noise_radius {} must be finite and non-negative", self.noise_radius));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return config_err("bn_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return config_err("bn_momentum must lie in [0, 1]");
        }
        Ok(())
    }

    /// Applies one config line. Returns `false` for keys this type does not own.
    pub fn set(&mut self, kv: &KvLine) -> Result<bool> {
        match kv.key.as_str() {
            "image_size" => self.image_size = kv.parse()?,
            "blocks" => self.blocks = kv.parse_list()?,
            "latent_dim" => self.latent_dim = kv.parse()?,
            "dtype_channels" => self.dtype_channels = kv.parse()?,
            "topology" => self.topology = kv.parse()?,
            "noise_radius" => self.noise_radius = kv.parse()?,
            "convf_per_level" => self.convf_per_level = kv.parse()?,
            "bn_enabled" => self.bn_enabled = kv.parse_bool()?,
            "bn_eps" => self.bn_eps = kv.parse()?,
            "bn_momentum" => self.bn_momentum = kv.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        vec![
            ("image_size", self.image_size.to_string()),
            ("blocks", blocks.join(",")),
            ("latent_dim", self.latent_dim.to_string()),
            ("dtype_channels", self.dtype_channels.to_string()),
            ("topology", self.topology.to_string()),
            ("noise_radius", format!("{:?}", self.noise_radius)),
            ("convf_per_level", self.convf_per_level.to_string()),
            ("bn_enabled", self.bn_enabled.to_string()),
            ("bn_eps", format!("{:?}", self.bn_eps)),
            ("bn_momentum", format!("{:?}", self.bn_momentum)),
        ]
    }

    /// Scalar count over every stored tensor (trainable and buffers) of the
    /// model this config builds. Saturates instead of overflowing.
    pub fn stored_numel(&self) -> u128 {
        let k = CONVF_KERNEL as u128;
        let nj = self.topology.len() as u128;
        let dtype = self.dtype_channels as u128;
        let block = |cin: u128, cout: u128, bn: bool| {
            let compenv = cin * 9 + 1;
            let change = (dtype + nj) * cout * 16 + cout;
            let cell = cin * cout * 16 + if bn { 4 * cout } else { cout };
            let born = cout * cout * 9 + cout;
            compenv + change + cell + born
        };
        let convf = |ch: u128| self.convf_per_level as u128 * 2 * (ch * ch * k * k + ch);
        let widths: Vec<u128> = self.blocks.iter().map(|&w| w as u128).collect();
        let levels = widths.len().saturating_sub(1);
        let mut total = 0u128;
        for i in 0..levels {
            let (a, b) = (widths[i], widths[i + 1]);
            total = total.saturating_add(block(a, b, self.bn_enabled) + convf(b));
            total = total.saturating_add(block(b, a, self.bn_enabled && i > 0) + convf(b));
        }
        let (cb, sb) = self.bottleneck();
        let flat = (cb * sb * sb) as u128;
        let latent = self.latent_dim as u128;
        total.saturating_add(flat * latent * 2 + latent + flat)
    }

    pub fn to_text(&self) -> String {
        render_kv(self.echo())
    }

    /// Parses text holding only model keys, starting from the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for kv in crate::config::parse_kv(text)? {
            if !c.set(&kv)? {
                return Err(kv.error("unknown model key"));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLevel {
    pub block: GrowthBlock,
    pub convf: Vec<ConvF>,
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub convf: Vec<ConvF>,
    pub block: GrowthBlock,
}

/// Latent code before and after the training noise.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub pre_noise: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct SimpleGrowth<T: Scalar> {
    config: SimpleGrowthConfig,
    params: ParamStore<T>,
    encoder: Vec<EncoderLevel>,
    enc_fc: Linear,
    dec_fc: Linear,
    decoder: Vec<DecoderLevel>,
}

impl<T: Scalar> SimpleGrowth<T> {
    pub fn new(config: SimpleGrowthConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let block_cfg = |mode, cin, cout, bn| GrowthBlockConfig {
            dtype_channels: c.dtype_channels,
            topology: c.topology.clone(),
            batch_norm: bn,
            bn_eps: c.bn_eps,
            bn_momentum: c.bn_momentum,
            ..GrowthBlockConfig::new(mode, cin, cout)
        };
        let convfs = |store: &mut ParamStore<T>, prefix: &str, ch: usize| -> Result<Vec<ConvF>> {
            (0..c.convf_per_level)
                .map(|j| ConvF::new(store, &format!("{prefix}.convf{j}"), ch, ch, CONVF_KERNEL, 1, seed))
                .collect()
        };

        let mut encoder = Vec::new();
        for (i, w) in c.blocks.windows(2).enumerate() {
            let prefix = format!("enc{i}");
            let block = GrowthBlock::new(
                &mut store,
                &prefix,
                block_cfg(GrowthMode::Merge, w[0], w[1], c.bn_enabled),
                seed,
            )?;
            let convf = convfs(&mut store, &prefix, w[1])?;
            encoder.push(EncoderLevel { block, convf });
        }
        let (cb, sb) = c.bottleneck();
        let flat = cb * sb * sb;
        let enc_fc = Linear::new(&mut store, "enc_fc", flat, c.latent_dim, seed)?;
        let dec_fc = Linear::new(&mut store, "dec_fc", c.latent_dim, flat, seed)?;

        let widths: Vec<usize> = c.blocks.iter().rev().copied().collect();
        let mut decoder = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let prefix = format!("dec{i}");
            let last = i + 2 == widths.len();
            let convf = convfs(&mut store, &prefix, w[0])?;
            let block = GrowthBlock::new(
                &mut store,
                &prefix,
                block_cfg(GrowthMode::Div, w[0], w[1], c.bn_enabled && !last),
                seed,
            )?;
            decoder.push(DecoderLevel { convf, block });
        }

        Ok(SimpleGrowth {
            config,
            params: store,
            encoder,
            enc_fc,
            dec_fc,
            decoder,
        })
    }

    pub fn config(&self) -> &SimpleGrowthConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder(&self) -> &[EncoderLevel] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[DecoderLevel] {
        &self.decoder
    }

    /// Same architecture with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> SimpleGrowth<U> {
        SimpleGrowth {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            enc_fc: self.enc_fc.clone(),
            dec_fc: self.dec_fc.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.image_size;
        match x.shape() {
            [_, c, h, w] if *c == IMAGE_CHANNELS && *h == s && *w == s => Ok(()),
            other => shape_err(format!("expected images (B, 3, {s}, {s}), got {other:?}")),
        }
    }

    /// Encoder on the graph. Noise (keyed by `noise_seed`) is added only in
    /// train mode; otherwise `z` is `pre_noise`.
    pub fn encode_graph(&self, ctx: &mut Ctx<'_, T>, x: Var, noise_seed: u64) -> Result<Latent> {
        self.check_input(ctx.graph.value(x))?;
        let mut h = x;
        for level in &self.encoder {
            h = level.block.forward(ctx, h)?;
            for f in &level.convf {
                h = f.forward(ctx, h)?;
            }
        }
        let b = ctx.graph.value(h).shape()[0];
        let flat = self.enc_fc.in_features;
        let h = ctx.graph.reshape(h, &[b, flat])?;
        let h = self.enc_fc.forward(ctx, h)?;
        let pre_noise = ctx.graph.tanh(h);
        let r = self.config.noise_radius;
        let z = if ctx.mode == Mode::Train && r > 0.0 {
            let noise = Tensor::uniform(&[b, self.config.latent_dim], -r, r, noise_seed)?;
            let n = ctx.graph.constant(noise);
            ctx.graph.add(pre_noise, n)?
        } else {
            pre_noise
        };
        Ok(Latent { pre_noise, z })
    }

    pub fn decode_graph(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let shape = ctx.graph.value(z).shape().to_vec();
        let &[b, d] = shape.as_slice() else {
            return shape_err(format!("expected latents (B, {}), got {shape:?}", self.config.latent_dim));
        };
        if d != self.config.latent_dim {
            return shape_err(format!("expected latents (B, {}), got {shape:?}", self.config.latent_dim));
        }
        let (cb, sb) = self.config.bottleneck();
        let h = self.dec_fc.forward(ctx, z)?;
        let mut h = ctx.graph.reshape(h, &[b, cb, sb, sb])?;
        for level in &self.decoder {
            for f in &level.convf {
                h = f.forward(ctx, h)?;
            }
            h = level.block.forward(ctx, h)?;
        }
        Ok(h)
    }

    pub fn forward_graph(&self, ctx: &mut Ctx<'_, T>, x: Var, noise_seed: u64) -> Result<Var> {
        let latent = self.encode_graph(ctx, x, noise_seed)?;
        self.decode_graph(ctx, latent.z)
    }

    /// Eager encode without gradient tracking.
    pub fn encode(&self, x: &Tensor<T>, mode: Mode, noise_seed: u64) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, &self.params, false, mode);
        let xv = ctx.graph.constant(x.clone());
        let latent = self.encode_graph(&mut ctx, xv, noise_seed)?;
        Ok(g.value(latent.z).clone())
    }

    /// Eager eval-mode decode.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, &self.params, false, Mode::Eval);
        let zv = ctx.graph.constant(z.clone());
        let y = self.decode_graph(&mut ctx, zv)?;
        Ok(g.value(y).clone())
    }

    /// Eager forward pass. Train mode uses batch statistics and latent noise
    /// but does not touch the running statistics.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, noise_seed: u64) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, &self.params, false, mode);
        let xv = ctx.graph.constant(x.clone());
        let y = self.forward_graph(&mut ctx, xv, noise_seed)?;
        Ok(g.value(y).clone())
    }

    /// Eval-mode reconstruction in chunks of `batch` images.
    pub fn reconstruct(&self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let batch = batch.max(1);
        let mut parts = Vec::new();
        for lo in (0..n).step_by(batch) {
            let chunk = x.narrow(0, lo, (lo + batch).min(n))?;
            parts.push(self.forward(&chunk, Mode::Eval, 0)?);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat(&refs, 0)
    }
}

/// `z_k = z1 + k·(z2 − z1)/n` for `k = 0..n`; the sequence stops one step
/// short of `z2`.
pub fn interpolate<T: Scalar>(z1: &Tensor<T>, z2: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    if n < 2 {
        return arg_err(format!("interpolation needs at least 2 steps, got {n}"));
    }
    z1.expect_same_shape(z2)?;
    let diff = z2.sub(z1)?;
    let count = T::of(n as f64);
    (0..n)
        .map(|k| {
            let kf = T::of(k as f64);
            z1.zip_map(&diff, |a, d| a + kf * d / count)
        })
        .collect()
}

/// `count` latent vectors with coordinates uniform on `[-1, 1)`.
pub fn sample_uniform_latents<T: Scalar>(count: usize, latent_dim: usize, seed: u64) -> Result<Tensor<T>> {
    if count == 0 || latent_dim == 0 {
        return arg_err("latent count and dimension must be positive");
    }
    Tensor::uniform(&[count, latent_dim], -1.0, 1.0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [
            SimpleGrowthConfig::cifar32(),
            SimpleGrowthConfig::celeba64(),
            SimpleGrowthConfig::smoke(),
            SimpleGrowthConfig::gradcheck(),
        ] {
            c.validate().unwrap();
        }
        assert_eq!(SimpleGrowthConfig::cifar32().bottleneck(), (64, 4));
        assert_eq!(SimpleGrowthConfig::celeba64().bottleneck(), (64, 4));
    }

    #[test]
    fn invalid_configs() {
        let base = SimpleGrowthConfig::cifar32();
        let bad = [
            SimpleGrowthConfig { blocks: vec![3], ..base.clone() },
            SimpleGrowthConfig { blocks: vec![4, 8], ..base.clone() },
            SimpleGrowthConfig { blocks: vec![3, 2, 8], ..base.clone() },
            SimpleGrowthConfig { image_size: 30, ..base.clone() },
            SimpleGrowthConfig { image_size: 8, ..base.clone() },
            SimpleGrowthConfig { latent_dim: 0, ..base.clone() },
            SimpleGrowthConfig { noise_radius: -0.1, ..base.clone() },
            SimpleGrowthConfig { dtype_channels: 4, ..base.clone() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(crate::Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let c = SimpleGrowthConfig::celeba64();
        assert_eq!(SimpleGrowthConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(SimpleGrowthConfig::from_text("epochs = 3").is_err());
    }

    #[test]
    fn interpolation_formula() {
        let z1 = Tensor::<f64>::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        let z2 = Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap();
        let zs = interpolate(&z1, &z2, 4).unwrap();
        assert_eq!(zs.len(), 4);
        assert_eq!(zs[0], z1);
        assert_eq!(zs[3].data(), &[0.75, -0.5]);
        assert!(interpolate(&z1, &z2, 1).is_err());
    }
}
