//! Procedural stand-in for CIFAR-10 in its exact binary format, for runs
//! where the real batches are not on disk.
//!
//! Each image is a Gaussian random field with a 1/f amplitude spectrum
//! (the usual falloff of natural photographs), mostly shared across
//! channels, shifted and scaled to CIFAR-10's per-channel mean and standard
//! deviation, with one soft-edged disc on top as a foreground object.
//! Labels are drawn uniformly from 0..10.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{mix_seed, stream};

use super::{CIFAR_RECORD_BYTES, CIFAR_SIDE};

/// Published CIFAR-10 training-set channel statistics on the [0, 1] scale.
const CHANNEL_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
const CHANNEL_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
/// Highest spatial frequency (cycles per image) in the fields.
const MAX_FREQ: i32 = 8;
/// Share of each channel taken from the common luminance field.
const LUMA_SHARE: f64 = 0.85;
/// Gain on the standardized signal that offsets the variance lost to
/// clipping, so quantized channel deviations land on `CHANNEL_STD`.
const SPREAD: f64 = 1.15;

/// Zero-mean, unit-variance field with amplitude `1/|k|`.
fn pink_field(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = CIFAR_SIDE;
    let mut field = vec![0.0; s * s];
    let mut total_power = 0.0;
    let w = TAU / s as f64;
    for ky in 0..=MAX_FREQ {
        for kx in -MAX_FREQ..=MAX_FREQ {
            if ky == 0 && kx <= 0 {
                continue;
            }
            let f = ((kx * kx + ky * ky) as f64).sqrt();
            let amp = rng.gen::<f64>().sqrt() / f;
            let phase = rng.gen::<f64>() * TAU;
            // cos(a + b) = cos a cos b - sin a sin b, split over rows and columns
            let (sx, cx): (Vec<f64>, Vec<f64>) = (0..s).map(|x| (w * kx as f64 * x as f64).sin_cos()).unzip();
            for y in 0..s {
                let (sy, cy) = (w * ky as f64 * y as f64 + phase).sin_cos();
                let row = &mut field[y * s..][..s];
                for x in 0..s {
                    row[x] += amp * (cx[x] * cy - sx[x] * sy);
                }
            }
            total_power += amp * amp / 2.0;
        }
    }
    let norm = total_power.sqrt().max(1e-12);
    field.iter_mut().for_each(|v| *v /= norm);
    field
}

pub fn synthetic_cifar10(records: usize, seed: u64) -> Vec<u8> {
    let s = CIFAR_SIDE;
    let mut out = Vec::with_capacity(records * CIFAR_RECORD_BYTES);
    for r in 0..records {
        let mut rng = stream(mix_seed(seed, &[0x5e7, r as u64]));
        let luma = pink_field(&mut rng);
        let contrast = rng.gen_range(0.4..1.2);
        let brightness: f64 = rng.gen_range(-0.8..0.8);
        let (cx, cy) = (rng.gen_range(8.0..24.0), rng.gen_range(8.0..24.0));
        let radius: f64 = rng.gen_range(4.0..11.0);
        let label = rng.gen_range(0..10u8);
        let mut planes = Vec::with_capacity(3);
        for ch in 0..3 {
            let chroma = pink_field(&mut rng);
            let tint = rng.gen_range(-0.4..0.4);
            let object: f64 = rng.gen_range(-1.5..1.5);
            let plane: Vec<u8> = (0..s * s)
                .map(|i| {
                    let (x, y) = ((i % s) as f64, (i / s) as f64);
                    let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    let inside = 1.0 / (1.0 + ((d - radius) * 1.5).exp());
                    let bg = LUMA_SHARE * luma[i] + (1.0 - LUMA_SHARE) * chroma[i];
                    let z = contrast * bg * (1.0 - inside) + object * inside + brightness + tint;
                    let v = CHANNEL_MEAN[ch] + CHANNEL_STD[ch] * SPREAD * z;
                    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
                })
                .collect();
            planes.push(plane);
        }
        out.push(label);
        for p in planes {
            out.extend(p);
        }
    }
    out
}
