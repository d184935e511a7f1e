use simplegrowth::growth::{compenv, gated_update, ConvF, GrowthBlock, GrowthBlockConfig, GrowthMode, Topology};
use simplegrowth::layers::{conv2d, conv_transpose2d, Conv2d, Ctx, Mode, ParamStore};
use simplegrowth::tensor::gradcheck_vars;
use simplegrowth::{Graph, Tensor};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Naive 3x3 padding-1 single-output correlation over a cyclically shifted
/// input, indexed directly.
fn env_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: f64, right: i64, up: i64) -> Vec<f64> {
    let [b, c, h, wd] = x.dims4().unwrap();
    let at = |n: usize, ch: usize, i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= h as i64 || j >= wd as i64 {
            return 0.0;
        }
        let si = (i + up).rem_euclid(h as i64) as usize;
        let sj = (j - right).rem_euclid(wd as i64) as usize;
        x.data()[((n * c + ch) * h + si) * wd + sj]
    };
    let mut out = Vec::new();
    for n in 0..b {
        for i in 0..h as i64 {
            for j in 0..wd as i64 {
                let mut acc = bias;
                for ch in 0..c {
                    for di in 0..3 {
                        for dj in 0..3 {
                            acc += w.data()[(ch * 3 + di) * 3 + dj] * at(n, ch, i + di as i64 - 1, j + dj as i64 - 1);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn compenv_matches_modular_index_oracle() {
    let offsets: Vec<(i64, i64)> = (-2..=2).flat_map(|a| (-2..=2).map(move |b| (a, b))).collect();
    let topo = Topology::new(offsets.clone()).unwrap();
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::new(&mut store, "env", 2, 1, 3, 1, 1, true, 11).unwrap();
    store.set(conv.bias.unwrap(), Tensor::full(&[1], 0.25)).unwrap();
    let x = Tensor::<f64>::uniform(&[2, 2, 6, 7], -1.0, 1.0, 3).unwrap();

    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, &store, false, Mode::Eval);
    let xv = ctx.graph.constant(x.clone());
    let env = compenv(&mut ctx, xv, &topo, &conv).unwrap();
    let env = g.value(env).clone();
    assert_eq!(env.shape(), &[2, 25, 6, 7]);

    let w = store.get(conv.weight);
    for (k, &(right, up)) in offsets.iter().enumerate() {
        let want = env_oracle(&x, w, 0.25, right, up);
        let got = env.narrow(1, k, k + 1).unwrap();
        let diff = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "offset ({right},{up}): {diff}");
    }
}

#[test]
fn compenv_identity_row() {
    let topo = Topology::new(vec![(0, 0), (1, 0)]).unwrap();
    let mut store = ParamStore::<f32>::new();
    let conv = Conv2d::new(&mut store, "env", 1, 1, 1, 1, 0, true, 0).unwrap();
    store.set(conv.weight, Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
    let x = Tensor::<f32>::uniform(&[2, 1, 8, 8], 0.0, 1.0, 9).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, &store, false, Mode::Eval);
    let xv = ctx.graph.constant(x.clone());
    let env = compenv(&mut ctx, xv, &topo, &conv).unwrap();
    let env = g.value(env);
    assert_eq!(env.shape(), &[2, 2, 8, 8]);
    assert_eq!(env.narrow(1, 0, 1).unwrap(), x);
    assert_eq!(env.narrow(1, 1, 2).unwrap(), x.roll(1, 3).unwrap());
}

fn plain_block(store: &mut ParamStore<f64>, mode: GrowthMode, cin: usize, cout: usize) -> GrowthBlock {
    let cfg = GrowthBlockConfig::new(mode, cin, cout);
    GrowthBlock::new(store, "blk", cfg, 21).unwrap()
}

fn run_block(store: &ParamStore<f64>, block: &GrowthBlock, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, store, false, Mode::Eval);
    let xv = ctx.graph.constant(x.clone());
    let y = block.forward(&mut ctx, xv).unwrap();
    g.value(y).clone()
}

/// `cell(x)` and `born(cell(x))` from the eager kernels.
fn branches_eager(store: &ParamStore<f64>, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let p = |n: &str| store.get(store.find(n).unwrap());
    let cell = conv2d(x, p("blk.cell.weight"), Some(p("blk.cell.bias")), 2, 1).unwrap();
    let born = conv2d(&cell, p("blk.born.weight"), Some(p("blk.born.bias")), 1, 1).unwrap();
    (cell, born)
}

fn clamp_reference(pre: &Tensor<f64>) -> Vec<f64> {
    let [_, c, h, w] = pre.dims4().unwrap();
    pre.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if (i / (h * w)) % c < 3 { sigmoid(v) } else { v })
        .collect()
}

fn force_gate(store: &mut ParamStore<f64>, bias: f64) {
    let w = store.find("blk.change_det.weight").unwrap();
    let b = store.find("blk.change_det.bias").unwrap();
    let ws = store.get(w).shape().to_vec();
    store.set(w, Tensor::zeros(&ws)).unwrap();
    let bs = store.get(b).shape().to_vec();
    store.set(b, Tensor::full(&bs, bias)).unwrap();
}

#[test]
fn saturated_and_half_gates() {
    let x = Tensor::<f64>::uniform(&[2, 5, 8, 8], -1.0, 1.0, 4).unwrap();
    for (bias, c) in [(-1e6, 0.0), (1e6, 1.0), (0.0, 0.5)] {
        let mut store = ParamStore::new();
        let block = plain_block(&mut store, GrowthMode::Merge, 5, 6);
        // born bias nonzero so the two branches are distinguishable
        let bb = store.find("blk.born.bias").unwrap();
        store.set(bb, Tensor::full(&[6], 0.3)).unwrap();
        force_gate(&mut store, bias);
        let y = run_block(&store, &block, &x);
        let (cell, born) = branches_eager(&store, &x);
        let pre = cell.zip_map(&born, |a, b| (1.0 - c) * a + c * b).unwrap();
        let want = clamp_reference(&pre);
        let diff = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "gate {c}: {diff}");
    }
}

#[test]
fn gated_update_with_forced_gate() {
    let cell = Tensor::<f64>::uniform(&[1, 4, 3, 3], -2.0, 2.0, 1).unwrap();
    let born = Tensor::<f64>::uniform(&[1, 4, 3, 3], -2.0, 2.0, 2).unwrap();
    let mut g = Graph::new();
    let (cv, bv) = (g.constant(cell.clone()), g.constant(born.clone()));
    let half = g.constant(Tensor::full(&[1, 4, 3, 3], 0.5));
    let y = gated_update(&mut g, cv, half, bv).unwrap();
    let pre = cell.zip_map(&born, |a, b| 0.5 * a + 0.5 * b).unwrap();
    let want = clamp_reference(&pre);
    for (a, b) in g.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn block_shapes_and_clamp() {
    let mut store = ParamStore::new();
    let merge = plain_block(&mut store, GrowthMode::Merge, 8, 6);
    let x = Tensor::<f64>::uniform(&[4, 8, 16, 16], -3.0, 3.0, 5).unwrap();
    let y = run_block(&store, &merge, &x);
    assert_eq!(y.shape(), &[4, 6, 8, 8]);
    let [_, c, h, w] = y.dims4().unwrap();
    for (i, &v) in y.data().iter().enumerate() {
        if (i / (h * w)) % c < 3 {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    let mut store2 = ParamStore::new();
    let div = plain_block(&mut store2, GrowthMode::Div, 8, 5);
    let x = Tensor::<f64>::uniform(&[4, 8, 8, 8], -1.0, 1.0, 6).unwrap();
    assert_eq!(run_block(&store2, &div, &x).shape(), &[4, 5, 16, 16]);
}

#[test]
fn merge_then_div_restores_extent() {
    let mut store = ParamStore::<f64>::new();
    let merge = GrowthBlock::new(&mut store, "m", GrowthBlockConfig::new(GrowthMode::Merge, 3, 4), 1).unwrap();
    let div = GrowthBlock::new(&mut store, "d", GrowthBlockConfig::new(GrowthMode::Div, 4, 3), 1).unwrap();
    let x = Tensor::<f64>::uniform(&[1, 3, 12, 10], 0.0, 1.0, 7).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, &store, false, Mode::Eval);
    let xv = ctx.graph.constant(x);
    let m = merge.forward(&mut ctx, xv).unwrap();
    let d = div.forward(&mut ctx, m).unwrap();
    assert_eq!(g.value(d).shape(), &[1, 3, 12, 10]);
}

/// Gradcheck of `loss(block(x))` over `x` and every stored parameter.
fn block_gradcheck<F>(store: &ParamStore<f64>, x: &Tensor<f64>, mode: Mode, fwd: F) -> f64
where
    F: Fn(&mut Ctx<'_, f64>, simplegrowth::Var) -> simplegrowth::Result<simplegrowth::Var>,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(store.entries().iter().map(|e| e.value.clone()));
    let errs = gradcheck_vars(
        |g, vars| {
            let mut ctx = Ctx::new(g, vars[1..].to_vec(), mode);
            let y = fwd(&mut ctx, vars[0])?;
            Ok(ctx.graph.mean(y))
        },
        &inputs,
        1e-4,
        1e-5,
    )
    .unwrap();
    errs.into_iter().fold(0.0, f64::max)
}

#[test]
fn block_gradcheck_merge_and_div() {
    let x = Tensor::<f64>::uniform(&[2, 4, 8, 8], -1.0, 1.0, 8).unwrap();
    for mode in [GrowthMode::Merge, GrowthMode::Div] {
        let mut store = ParamStore::new();
        let block = plain_block(&mut store, mode, 4, 4);
        let err = block_gradcheck(&store, &x, Mode::Eval, |ctx, v| block.forward(ctx, v));
        assert!(err < 1e-5, "{mode:?}: {err}");
    }
}

#[test]
fn block_gradcheck_with_batch_norm() {
    let x = Tensor::<f64>::uniform(&[2, 4, 8, 8], -1.0, 1.0, 10).unwrap();
    let mut store = ParamStore::new();
    let mut cfg = GrowthBlockConfig::new(GrowthMode::Merge, 4, 4);
    cfg.batch_norm = true;
    let block = GrowthBlock::new(&mut store, "blk", cfg, 3).unwrap();
    let err = block_gradcheck(&store, &x, Mode::Train, |ctx, v| block.forward(ctx, v));
    assert!(err < 1e-5, "{err}");
}

#[test]
fn convf_shape_range_and_gradcheck() {
    let mut store = ParamStore::<f64>::new();
    let f = ConvF::new(&mut store, "cf", 4, 5, 3, 1, 2).unwrap();
    let x = Tensor::<f64>::uniform(&[1, 4, 8, 8], -2.0, 2.0, 12).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, &store, false, Mode::Eval);
    let xv = ctx.graph.constant(x.clone());
    let y = f.forward(&mut ctx, xv).unwrap();
    let y = g.value(y);
    assert_eq!(y.shape(), &[1, 5, 8, 8]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));

    // eager reference
    let p = |n: &str| store.get(store.find(n).unwrap());
    let t = conv_transpose2d(&x, p("cf.expand.weight"), Some(p("cf.expand.bias")), 1, 0).unwrap();
    let t = conv2d(&t.map(f64::tanh), p("cf.shrink.weight"), Some(p("cf.shrink.bias")), 1, 0).unwrap();
    assert!(t.map(f64::tanh).max_abs_diff(y).unwrap() < 1e-12);

    let x = Tensor::<f64>::uniform(&[1, 4, 5, 5], -1.0, 1.0, 13).unwrap();
    let err = block_gradcheck(&store, &x, Mode::Eval, |ctx, v| f.forward(ctx, v));
    assert!(err < 1e-5, "{err}");
}

#[test]
fn growth_rejects_mismatched_env() {
    let mut store = ParamStore::<f64>::new();
    let block = plain_block(&mut store, GrowthMode::Merge, 4, 4);
    let mut g = Graph::new();
    let mut ctx = Ctx::bind(&mut g, &store, false, Mode::Eval);
    let x = ctx.graph.constant(Tensor::zeros(&[1, 4, 8, 8]));
    let env = ctx.graph.constant(Tensor::zeros(&[1, 7, 8, 8]));
    assert!(block.growth(&mut ctx, x, env).is_err());
}
