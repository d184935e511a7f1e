use proptest::prelude::*;
use simplegrowth::layers::{
    conv2d, conv_transpose2d, conv_transpose2d_sized, linear, BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, Linear, Mode, ParamStore,
};
use simplegrowth::tensor::gradcheck_vars;
use simplegrowth::{Error, Graph, Tensor};

fn rand32(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, -1.0, 1.0, seed).unwrap()
}

fn rand64(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, seed).unwrap()
}

/// Direct summation over every output position and kernel tap, in f64.
fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, k, _] = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for ni in 0..n {
        for (co, &bias) in b.iter().enumerate().take(cout) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias as f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

/// Every shape up to (2, 3, 6, 6) that admits an output.
fn shape_matrix() -> Vec<(usize, usize, usize, usize, usize)> {
    let mut v = Vec::new();
    for n in [1, 2] {
        for c in [1, 2, 3] {
            for s in 1..=6 {
                for k in [1, 2, 3] {
                    for stride in [1, 2] {
                        for pad in [0, 1] {
                            if s + 2 * pad >= k {
                                v.push((n, c, s, k, stride * 10 + pad));
                            }
                        }
                    }
                }
            }
        }
    }
    v
}

#[test]
fn conv2d_matches_direct_oracle_over_shape_matrix() {
    let mut seed = 0;
    for (n, c, s, k, sp) in shape_matrix() {
        let (stride, pad) = (sp / 10, sp % 10);
        seed += 1;
        let cout = 1 + seed as usize % 3;
        let x = rand32(&[n, c, s, s], seed);
        let w = rand32(&[cout, c, k, k], seed + 1000);
        let b = rand32(&[cout], seed + 2000);
        let y = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        let (shape, want) = conv_oracle(&x, &w, b.data(), stride, pad);
        assert_eq!(y.shape(), shape.as_slice());
        let diff = y.data().iter().zip(&want).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "{:?} k{k} s{stride} p{pad}: {diff}", shape);
    }
}

fn adjoint_rel_err(n: usize, c: usize, s: usize, k: usize, stride: usize, pad: usize, seed: u64) -> f64 {
    let cout = 2;
    let x = rand32(&[n, c, s, s], seed);
    let w = rand32(&[cout, c, k, k], seed ^ 0xa);
    let y = conv2d(&x, &w, None, stride, pad).unwrap();
    let r = rand32(y.shape(), seed ^ 0xb);
    // the same weight tensor read as (in, out, k, k) for the transpose
    let back = conv_transpose2d_sized(&r, &w, None, stride, pad, (s, s)).unwrap();
    if let Ok(short) = conv_transpose2d(&r, &w, None, stride, pad) {
        // the default extent is a leading window of the full adjoint
        let [_, _, bh, bw] = short.dims4().unwrap();
        assert_eq!(short, back.narrow(2, 0, bh).unwrap().narrow(3, 0, bw).unwrap());
    }
    let (lhs, rhs) = (y.dot(&r).unwrap(), x.dot(&back).unwrap());
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-6)
}

#[test]
fn transpose_is_adjoint_over_shape_matrix() {
    for (i, (n, c, s, k, sp)) in shape_matrix().into_iter().enumerate() {
        let err = adjoint_rel_err(n, c, s, k, sp / 10, sp % 10, i as u64);
        assert!(err < 1e-4, "({n},{c},{s},{s}) k{k} {sp}: {err}");
    }
}

#[test]
fn adjointness_five_trials() {
    for trial in 0..5 {
        let err = adjoint_rel_err(2, 3, 6, 3, 2, 1, 100 + trial);
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

#[test]
fn linear_matches_loop_oracle() {
    let x = rand32(&[5, 7], 1);
    let w = rand32(&[4, 7], 2);
    let b = rand32(&[4], 3);
    let y = linear(&x, &w, &b).unwrap();
    for i in 0..5 {
        for o in 0..4 {
            let want: f64 = b.data()[o] as f64
                + (0..7).map(|j| x.data()[i * 7 + j] as f64 * w.data()[o * 7 + j] as f64).sum::<f64>();
            assert!((y.data()[i * 4 + o] as f64 - want).abs() < 1e-5);
        }
    }
    assert!(matches!(linear(&x, &rand32(&[4, 6], 4), &b), Err(Error::Shape(_))));
}

#[test]
fn init_bounds_zero_bias_and_determinism() {
    let mut a = ParamStore::<f32>::new();
    let conv = Conv2d::new(&mut a, "c", 4, 5, 3, 1, 1, true, 7).unwrap();
    let w = a.get(conv.weight);
    assert!(w.data().iter().all(|&v| v.abs() < 1.0 / 6.0));
    assert!(w.data().iter().any(|&v| v.abs() > 0.15));
    assert!(a.get(conv.bias.unwrap()).data().iter().all(|&v| v == 0.0));
    let mut b = ParamStore::<f32>::new();
    Conv2d::new(&mut b, "c", 4, 5, 3, 1, 1, true, 7).unwrap();
    assert_eq!(a.entries()[0].value, b.entries()[0].value);
    let mut c = ParamStore::<f32>::new();
    Conv2d::new(&mut c, "c", 4, 5, 3, 1, 1, true, 8).unwrap();
    assert_ne!(a.entries()[0].value, c.entries()[0].value);
}

fn bn_apply(store: &ParamStore<f64>, bn: &BatchNorm2d, x: &Tensor<f64>, mode: Mode) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, store, false, mode);
    let xv = ctx.graph.constant(x.clone());
    let y = bn.forward(&mut ctx, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn batch_norm_statistics_and_eval_purity() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 3, 1e-5, 0.1).unwrap();
    let x = rand64(&[4, 3, 5, 5], 5).map(|v| 3.0 * v + 1.5);
    let y = bn_apply(&store, &bn, &x, Mode::Train);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 3 + c) * 25..][..25].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3, "{mean} {var}");
    }
    let e1 = bn_apply(&store, &bn, &x, Mode::Eval);
    assert_eq!(e1, bn_apply(&store, &bn, &x, Mode::Eval));
    // fresh running stats are (0, 1): eval is x / sqrt(1 + eps)
    let want = x.map(|v| v / (1.0f64 + 1e-5).sqrt());
    assert!(e1.max_abs_diff(&want).unwrap() < 1e-12);
}

fn layer_gradcheck(store: &ParamStore<f64>, x: Tensor<f64>, mode: Mode, f: impl Fn(&mut Ctx<'_, f64>, simplegrowth::Var) -> simplegrowth::Result<simplegrowth::Var>) -> f64 {
    let mut inputs = vec![x];
    inputs.extend(store.entries().iter().map(|e| e.value.clone()));
    let r = rand64(&[64], 77);
    let errs = gradcheck_vars(
        |g, v| {
            let mut ctx = Ctx::new(g, v[1..].to_vec(), mode);
            let y = f(&mut ctx, v[0])?;
            let y = ctx.graph.tanh(y);
            let n = ctx.graph.value(y).numel();
            let flat = ctx.graph.reshape(y, &[n])?;
            let w = ctx.graph.constant(r.narrow(0, 0, n).unwrap());
            let p = ctx.graph.mul(flat, w)?;
            Ok(ctx.graph.sum(p))
        },
        &inputs,
        1e-4,
        1e-5,
    )
    .unwrap();
    errs.into_iter().fold(0.0, f64::max)
}

fn nonzero_bias(store: &mut ParamStore<f64>) {
    for id in store.trainable() {
        let v = store.get(id).add(&rand64(store.get(id).shape(), 40 + id.0 as u64).map(|v| 0.2 * v)).unwrap();
        store.set(id, v).unwrap();
    }
}

#[test]
fn every_layer_passes_gradcheck() {
    let mut s = ParamStore::new();
    let conv = Conv2d::new(&mut s, "c", 2, 2, 3, 2, 1, true, 1).unwrap();
    nonzero_bias(&mut s);
    let e = layer_gradcheck(&s, rand64(&[1, 2, 5, 5], 2), Mode::Eval, |c, x| conv.forward(c, x));
    assert!(e < 1e-5, "conv {e}");

    let mut s = ParamStore::new();
    let convt = ConvTranspose2d::new(&mut s, "t", 2, 2, 3, 2, 1, true, 3).unwrap();
    nonzero_bias(&mut s);
    let e = layer_gradcheck(&s, rand64(&[1, 2, 3, 3], 4), Mode::Eval, |c, x| convt.forward(c, x));
    assert!(e < 1e-5, "convT {e}");

    let mut s = ParamStore::new();
    let fc = Linear::new(&mut s, "l", 5, 3, 5).unwrap();
    nonzero_bias(&mut s);
    let e = layer_gradcheck(&s, rand64(&[2, 5], 6), Mode::Eval, |c, x| fc.forward(c, x));
    assert!(e < 1e-5, "linear {e}");

    let mut s = ParamStore::new();
    let bn = BatchNorm2d::new(&mut s, "bn", 2, 1e-5, 0.1).unwrap();
    nonzero_bias(&mut s);
    let e = layer_gradcheck(&s, rand64(&[2, 2, 3, 3], 7), Mode::Train, |c, x| bn.forward(c, x));
    assert!(e < 1e-5, "batch norm {e}");
}

#[test]
fn mean_of_batch_norm_gradient() {
    let x = rand64(&[2, 3, 2, 2], 8);
    let gamma = Tensor::new(&[3], vec![0.5, 1.0, 1.5]).unwrap();
    let beta = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
    let errs = gradcheck_vars(
        |g, v| {
            let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            let t = g.tanh(y);
            Ok(g.mean(t))
        },
        &[x, gamma, beta],
        1e-4,
        1e-5,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_identity(seed in any::<u64>(), idx in 0usize..10_000) {
        let m = shape_matrix();
        let (n, c, s, k, sp) = m[idx % m.len()];
        prop_assert!(adjoint_rel_err(n, c, s, k, sp / 10, sp % 10, seed) < 1e-4);
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), a in -2.0f64..2.0) {
        let x = rand64(&[1, 2, 5, 5], seed);
        let z = rand64(&[1, 2, 5, 5], seed ^ 3);
        let w = rand64(&[3, 2, 3, 3], seed ^ 5);
        let lhs = conv2d(&x.add(&z.scale(a)).unwrap(), &w, None, 1, 1).unwrap();
        let rhs = conv2d(&x, &w, None, 1, 1).unwrap().add(&conv2d(&z, &w, None, 1, 1).unwrap().scale(a)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}
