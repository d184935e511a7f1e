//! Direct-loop cross-correlation kernels shared by conv2d and its transpose.
//!
//! All three kernels are phrased in terms of one forward correlation
//! `y = corr(x, w)` with `x: (n, cin, h, w)`, `w: (cout, cin, kh, kw)`,
//! `y: (n, cout, oh, ow)`:
//!
//! * [`corr_forward`] computes `y`,
//! * [`corr_adjoint`] applies the transpose map to a `y`-shaped tensor,
//! * [`corr_weight_grad`] contracts an `x`-shaped and a `y`-shaped tensor
//!   into a `w`-shaped one.
//!
//! A transposed convolution is `corr_adjoint` used as a forward pass.

use std::ops::Range;

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// floor((input + 2·pad − k)/stride) + 1, or `None` when no position fits.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

/// (input − 1)·stride − 2·pad + k, or `None` when that is not positive.
pub fn conv_transpose_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + k;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// Output positions `o` in `0..out` whose input index `o·stride + k − pad` lies in `0..input`.
#[inline]
fn valid(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> Range<usize> {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if input + pad > k {
        ((input - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    lo..hi.max(lo)
}

pub(crate) fn corr_forward<T: Scalar>(x: &[T], wt: &[T], g: &Geom) -> Vec<T> {
    let (s, p) = (g.stride, g.pad);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut y = vec![T::zero(); g.n * g.cout * plane_out];
    for n in 0..g.n {
        for o in 0..g.cout {
            let out = &mut y[(n * g.cout + o) * plane_out..][..plane_out];
            for c in 0..g.cin {
                let xin = &x[(n * g.cin + c) * plane_in..][..plane_in];
                let wk = &wt[(o * g.cin + c) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let rows = valid(g.oh, g.h, ky, s, p);
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        let cols = valid(g.ow, g.w, kx, s, p);
                        if cols.is_empty() {
                            continue;
                        }
                        for oy in rows.clone() {
                            let iy = oy * s + ky - p;
                            let xrow = &xin[iy * g.w..][..g.w];
                            let orow = &mut out[oy * g.ow..][..g.ow];
                            if s == 1 {
                                let off = cols.start + kx - p;
                                for (ov, &xv) in orow[cols.clone()]
                                    .iter_mut()
                                    .zip(&xrow[off..off + cols.len()])
                                {
                                    *ov = *ov + wv * xv;
                                }
                            } else {
                                for ox in cols.clone() {
                                    orow[ox] = orow[ox] + wv * xrow[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn corr_adjoint<T: Scalar>(gy: &[T], wt: &[T], g: &Geom) -> Vec<T> {
    let (s, p) = (g.stride, g.pad);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut gx = vec![T::zero(); g.n * g.cin * plane_in];
    for n in 0..g.n {
        for c in 0..g.cin {
            let xin = &mut gx[(n * g.cin + c) * plane_in..][..plane_in];
            for o in 0..g.cout {
                let gout = &gy[(n * g.cout + o) * plane_out..][..plane_out];
                let wk = &wt[(o * g.cin + c) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let rows = valid(g.oh, g.h, ky, s, p);
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        let cols = valid(g.ow, g.w, kx, s, p);
                        if cols.is_empty() {
                            continue;
                        }
                        for oy in rows.clone() {
                            let iy = oy * s + ky - p;
                            let grow = &gout[oy * g.ow..][..g.ow];
                            let xrow = &mut xin[iy * g.w..][..g.w];
                            if s == 1 {
                                let off = cols.start + kx - p;
                                for (xv, &gv) in xrow[off..off + cols.len()]
                                    .iter_mut()
                                    .zip(&grow[cols.clone()])
                                {
                                    *xv = *xv + wv * gv;
                                }
                            } else {
                                for ox in cols.clone() {
                                    let ix = ox * s + kx - p;
                                    xrow[ix] = xrow[ix] + wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn corr_weight_grad<T: Scalar>(x: &[T], gy: &[T], g: &Geom) -> Vec<T> {
    let (s, p) = (g.stride, g.pad);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut gw = vec![T::zero(); g.cout * g.cin * g.kh * g.kw];
    for o in 0..g.cout {
        for c in 0..g.cin {
            let wk = &mut gw[(o * g.cin + c) * g.kh * g.kw..][..g.kh * g.kw];
            for ky in 0..g.kh {
                let rows = valid(g.oh, g.h, ky, s, p);
                for kx in 0..g.kw {
                    let cols = valid(g.ow, g.w, kx, s, p);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let xin = &x[(n * g.cin + c) * plane_in..][..plane_in];
                        let gout = &gy[(n * g.cout + o) * plane_out..][..plane_out];
                        for oy in rows.clone() {
                            let iy = oy * s + ky - p;
                            let xrow = &xin[iy * g.w..][..g.w];
                            let grow = &gout[oy * g.ow..][..g.ow];
                            for ox in cols.clone() {
                                acc = acc + grow[ox] * xrow[ox * s + kx - p];
                            }
                        }
                    }
                    wk[ky * g.kw + kx] = acc;
                }
            }
        }
    }
    gw
}

/// Per-channel sums of an `(n, ch, plane)` buffer.
pub(crate) fn channel_sums<T: Scalar>(y: &[T], n: usize, ch: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); ch];
    for b in 0..n {
        for (c, acc) in out.iter_mut().enumerate() {
            let s: f64 = y[(b * ch + c) * plane..][..plane]
                .iter()
                .map(|v| v.widen())
                .sum();
            *acc = *acc + T::of(s);
        }
    }
    out
}

/// Adds `bias[c]` to every element of channel `c`.
pub(crate) fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], n: usize, plane: usize) {
    let ch = bias.len();
    for b in 0..n {
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut y[(b * ch + c) * plane..][..plane] {
                *v = *v + bv;
            }
        }
    }
}
