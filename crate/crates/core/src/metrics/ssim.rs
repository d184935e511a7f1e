//! SSIM and MS-SSIM with a Gaussian window and valid (unpadded) filtering.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Standard five-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    /// Odd window side; shrunk to fit small images.
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range L of the pixel values.
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            dynamic_range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Window side used for an image whose smaller extent is `extent`:
    /// the configured side, or the largest odd side that fits.
    pub fn window_for(&self, extent: usize) -> Result<usize> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return arg_err(format!("SSIM window side must be odd and at least 3, got {}", self.window));
        }
        let side = if extent >= self.window {
            self.window
        } else if extent % 2 == 1 {
            extent
        } else {
            extent.saturating_sub(1)
        };
        if side < 3 {
            return arg_err(format!("image extent {extent} is below the minimum SSIM window of 3"));
        }
        Ok(side)
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(side: usize, sigma: f64) -> Vec<f64> {
    let mid = (side / 2) as f64;
    let raw: Vec<f64> = (0..side)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// `(C, h, w)` planes in f64.
struct Planes {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Planes {
    fn of<T: Scalar>(t: &Tensor<T>) -> Result<Planes> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] => (c, h, w),
            [1, c, h, w] => (c, h, w),
            _ => return shape_err(format!("expected an image (C, h, w), got {:?}", t.shape())),
        };
        Ok(Planes {
            c,
            h,
            w,
            data: t.data().iter().map(|v| v.widen()).collect(),
        })
    }

    fn plane(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..][..self.h * self.w]
    }

    /// 2×2 average pooling; an odd trailing row or column is dropped.
    fn pooled(&self) -> Planes {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(self.c * h * w);
        for ch in 0..self.c {
            let p = self.plane(ch);
            for y in 0..h {
                for x in 0..w {
                    let at = |yy: usize, xx: usize| p[(2 * y + yy) * self.w + 2 * x + xx];
                    data.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                }
            }
        }
        Planes { c: self.c, h, w, data }
    }
}

/// Separable valid filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM index and mean contrast-structure term over all positions and
/// channels.
fn ssim_terms(a: &Planes, b: &Planes, taps: &[f64], c1: f64, c2: f64) -> (f64, f64) {
    let (mut s_total, mut cs_total, mut count) = (0.0, 0.0, 0usize);
    for ch in 0..a.c {
        let (pa, pb) = (a.plane(ch), b.plane(ch));
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
        let f = |p: &[f64]| filter(p, a.h, a.w, taps);
        let (mu_a, mu_b) = (f(pa), f(pb));
        let (e_aa, e_bb, e_ab) = (f(&sq(pa, pa)), f(&sq(pb, pb)), f(&sq(pa, pb)));
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
            let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            s_total += lum * cs;
            cs_total += cs;
        }
        count += mu_a.len();
    }
    (s_total / count as f64, cs_total / count as f64)
}

fn pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Planes, Planes)> {
    if a.shape() != b.shape() {
        return shape_err(format!("SSIM operands differ in shape: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok((Planes::of(a)?, Planes::of(b)?))
}

pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    let (pa, pb) = pair(a, b)?;
    let side = cfg.window_for(pa.h.min(pa.w))?;
    Ok(ssim_terms(&pa, &pb, &gaussian_taps(side, cfg.sigma), cfg.c1(), cfg.c2()).0)
}

/// Number of scales MS-SSIM uses: at most five, and the coarsest scale
/// must still hold the window.
pub fn ms_ssim_scales(extent: usize, cfg: &SsimConfig) -> Result<usize> {
    let side = cfg.window_for(extent)?;
    let mut scales = 1;
    while scales < MS_SSIM_WEIGHTS.len() && extent >> scales >= side {
        scales += 1;
    }
    Ok(scales)
}

/// The first `scales` standard weights rescaled to sum to 1.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales.clamp(1, MS_SSIM_WEIGHTS.len())];
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

pub fn ms_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    let extent = a.shape().iter().rev().take(2).copied().min().unwrap_or(0);
    ms_ssim_with_scales(a, b, cfg, ms_ssim_scales(extent, cfg)?)
}

/// MS-SSIM at a fixed scale count. Contrast-structure terms from the finer
/// scales and the full index at the coarsest scale are combined as a
/// weighted geometric mean; negative terms are floored at 0 first. One
/// scale is plain SSIM.
pub fn ms_ssim_with_scales<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig, scales: usize) -> Result<f64> {
    let (mut pa, mut pb) = pair(a, b)?;
    let side = cfg.window_for(pa.h.min(pa.w))?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() || pa.h.min(pa.w) >> (scales - 1) < side {
        return arg_err(format!(
            "{scales} scales do not fit a {}x{} image with window {side}",
            pa.h, pa.w
        ));
    }
    let taps = gaussian_taps(side, cfg.sigma);
    let weights = ms_ssim_weights(scales);
    if scales == 1 {
        return Ok(ssim_terms(&pa, &pb, &taps, cfg.c1(), cfg.c2()).0);
    }
    let mut product = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let (full, cs) = ssim_terms(&pa, &pb, &taps, cfg.c1(), cfg.c2());
        let term = if s + 1 == scales { full } else { cs };
        product *= term.max(0.0).powf(*w);
        if s + 1 < scales {
            pa = pa.pooled();
            pb = pb.pooled();
        }
    }
    Ok(product)
}

/// Mean SSIM and mean MS-SSIM over paired batches `(N, C, h, w)`.
pub fn batch_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<(f64, f64)> {
    if a.shape() != b.shape() {
        return shape_err(format!("batches differ in shape: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let [n, ..] = a.dims4()?;
    if n == 0 {
        return arg_err("cannot score an empty batch");
    }
    let (mut s, mut ms) = (0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a.narrow(0, i, i + 1)?, b.narrow(0, i, i + 1)?);
        s += ssim(&x, &y, cfg)?;
        ms += ms_ssim(&x, &y, cfg)?;
    }
    Ok((s / n as f64, ms / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_sum_to_one() {
        for side in [3, 5, 11] {
            let t = gaussian_taps(side, 1.5);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert_eq!(t[0], t[side - 1]);
        }
    }

    #[test]
    fn window_shrinks() {
        let cfg = SsimConfig::default();
        assert_eq!(cfg.window_for(32).unwrap(), 11);
        assert_eq!(cfg.window_for(8).unwrap(), 7);
        assert_eq!(cfg.window_for(9).unwrap(), 9);
        assert!(cfg.window_for(2).is_err());
    }

    #[test]
    fn scale_counts() {
        let cfg = SsimConfig::default();
        assert_eq!(ms_ssim_scales(32, &cfg).unwrap(), 2);
        assert_eq!(ms_ssim_scales(64, &cfg).unwrap(), 3);
        assert_eq!(ms_ssim_scales(256, &cfg).unwrap(), 5);
        assert_eq!(ms_ssim_scales(11, &cfg).unwrap(), 1);
    }
}
