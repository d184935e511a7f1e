//! The f64 finite-difference suite behind `simplegrowth gradcheck`.

use std::time::{Duration, Instant};

use simplegrowth::growth::{GrowthBlock, GrowthBlockConfig, GrowthMode, ConvF};
use simplegrowth::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, Linear, Mode, ParamKind, ParamStore};
use simplegrowth::model::{SimpleGrowth, SimpleGrowthConfig};
use simplegrowth::tensor::gradcheck_vars;
use simplegrowth::train::mse;
use simplegrowth::{Graph, Result, Tensor, Var};

pub const LINEAR_TOLERANCE: f64 = 1e-10;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Linear functions are differenced exactly at any step; a wide one keeps
/// rounding out of the comparison.
const LINEAR_STEP: f64 = 0.1;
const LAYER_STEP: f64 = 1e-4;
const MODEL_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    /// Largest relative error over every input coordinate.
    pub error: f64,
    pub elapsed: Duration,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, seed).expect("valid shape")
}

/// `sum(r ⊙ y)` for a fixed random `r`; linear in `y`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(rand(g.value(y).shape(), seed));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

struct Suite<'a> {
    fault: Option<&'a str>,
    checks: Vec<Check>,
}

impl Suite<'_> {
    fn run<F>(&mut self, name: &'static str, tolerance: f64, step: f64, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let start = Instant::now();
        let fault = self.fault;
        let errs = gradcheck_vars(
            |g, v| {
                if let Some(op) = fault {
                    g.inject_fault(op);
                }
                f(g, v)
            },
            inputs,
            step,
            tolerance,
        )?;
        self.checks.push(Check {
            name,
            tolerance,
            error: errs.into_iter().fold(0.0, f64::max),
            elapsed: start.elapsed(),
        });
        Ok(())
    }

    fn linear(&mut self, name: &'static str, inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<()> {
        self.run(name, LINEAR_TOLERANCE, LINEAR_STEP, inputs, |g, v| {
            let y = f(g, v)?;
            project(g, y, 7)
        })
    }

    fn elementwise(&mut self, inputs: &[Tensor<f64>], name: &'static str, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<()> {
        self.run(name, LAYER_TOLERANCE, LAYER_STEP, inputs, |g, v| {
            let y = f(g, v)?;
            project(g, y, 8)
        })
    }

    /// A layer or block with its parameters as extra inputs.
    fn module<F>(&mut self, name: &'static str, store: &ParamStore<f64>, x: Tensor<f64>, mode: Mode, f: F) -> Result<()>
    where
        F: Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
    {
        let inputs = with_trainable(x, store);
        self.run(name, LAYER_TOLERANCE, LAYER_STEP, &inputs, |g, v| {
            let params = bind_params(g, store, &v[1..]);
            let mut ctx = Ctx::new(g, params, mode);
            let y = f(&mut ctx, v[0])?;
            let y = ctx.graph.tanh(y);
            project(ctx.graph, y, 99)
        })
    }
}

/// Runs every check. With `fault` set, that backward rule is deliberately
/// corrupted in every graph the suite builds.
pub fn run_gradient_suite(fault: Option<&str>) -> Result<Vec<Check>> {
    let mut s = Suite {
        fault,
        checks: Vec::new(),
    };
    let a = rand(&[2, 3, 4, 5], 1);
    let b = rand(&[2, 3, 4, 5], 2);
    s.linear("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]))?;
    s.linear("sub", &[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]))?;
    s.linear("affine", std::slice::from_ref(&a), |g, v| Ok(g.affine(v[0], -1.5, 0.25)))?;
    s.linear("sum", std::slice::from_ref(&a), |g, v| Ok(g.sum(v[0])))?;
    s.linear("mean", std::slice::from_ref(&a), |g, v| Ok(g.mean(v[0])))?;
    s.linear("reshape", std::slice::from_ref(&a), |g, v| g.reshape(v[0], &[6, 20]))?;
    s.linear("roll", std::slice::from_ref(&a), |g, v| {
        let r = g.roll(v[0], 2, 3)?;
        g.roll(r, -1, 2)
    })?;
    s.linear("concat", &[a.clone(), b.clone()], |g, v| g.concat(&[v[0], v[1]], 1))?;
    s.linear("narrow", std::slice::from_ref(&a), |g, v| g.narrow(v[0], 3, 1, 4))?;
    s.linear("assign", &[a.clone(), rand(&[2, 1, 4, 5], 3)], |g, v| g.assign_channels(v[0], 1, 2, v[1]))?;
    s.linear("linear", &[rand(&[3, 5], 4), rand(&[4, 5], 5), rand(&[4], 6)], |g, v| {
        g.linear(v[0], v[1], v[2])
    })?;

    let ab = [a.clone(), b.clone()];
    s.elementwise(&ab, "mul", |g, v| g.mul(v[0], v[1]))?;
    s.elementwise(&ab, "tanh", |g, v| Ok(g.tanh(v[0])))?;
    s.elementwise(&ab, "sigmoid", |g, v| Ok(g.sigmoid(v[0])))?;

    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "conv", 3, 4, 3, 2, 1, true, 1)?;
    randomize(&mut store, 10)?;
    s.module("conv2d", &store, rand(&[2, 3, 6, 6], 11), Mode::Eval, |ctx, x| conv.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let convt = ConvTranspose2d::new(&mut store, "convt", 3, 2, 4, 2, 1, true, 2)?;
    randomize(&mut store, 12)?;
    s.module("conv_transpose2d", &store, rand(&[2, 3, 3, 3], 13), Mode::Eval, |ctx, x| convt.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let bn = BatchNorm2d::new(&mut store, "bn", 3, 1e-5, 0.1)?;
    randomize(&mut store, 14)?;
    let bn_x = rand(&[2, 3, 3, 3], 15);
    s.module("batch_norm_train", &store, bn_x.clone(), Mode::Train, |ctx, x| bn.forward(ctx, x))?;
    let rv = store.find("bn.running_var").expect("registered");
    store.set(rv, Tensor::new(&[3], vec![0.5, 1.0, 2.0])?)?;
    s.module("batch_norm_eval", &store, bn_x, Mode::Eval, |ctx, x| bn.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let fc = Linear::new(&mut store, "fc", 6, 4, 3)?;
    randomize(&mut store, 16)?;
    let fc_x = rand(&[3, 6], 17);
    s.module("linear_layer", &store, fc_x, Mode::Eval, |ctx, x| fc.forward(ctx, x))?;

    let x = rand(&[2, 4, 6, 6], 20);
    let mut store = ParamStore::new();
    let merge = GrowthBlock::new(&mut store, "merge", GrowthBlockConfig::new(GrowthMode::Merge, 4, 5), 4)?;
    randomize(&mut store, 21)?;
    s.module("compenv", &store, x.clone(), Mode::Eval, |ctx, x| merge.compenv(ctx, x))?;
    s.module("growth_merge", &store, x.clone(), Mode::Eval, |ctx, x| merge.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let div = GrowthBlock::new(&mut store, "div", GrowthBlockConfig::new(GrowthMode::Div, 4, 3), 5)?;
    randomize(&mut store, 22)?;
    s.module("growth_div", &store, rand(&[2, 4, 3, 3], 23), Mode::Eval, |ctx, x| div.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let cfg = GrowthBlockConfig {
        batch_norm: true,
        ..GrowthBlockConfig::new(GrowthMode::Merge, 4, 4)
    };
    let merge_bn = GrowthBlock::new(&mut store, "merge_bn", cfg, 6)?;
    randomize(&mut store, 24)?;
    s.module("growth_merge_bn", &store, x, Mode::Train, |ctx, x| merge_bn.forward(ctx, x))?;

    let mut store = ParamStore::new();
    let convf = ConvF::new(&mut store, "convf", 3, 3, 3, 1, 7)?;
    randomize(&mut store, 25)?;
    s.module("convf", &store, rand(&[1, 3, 4, 4], 26), Mode::Eval, |ctx, x| convf.forward(ctx, x))?;

    let model = SimpleGrowth::<f64>::new(SimpleGrowthConfig::gradcheck(), 9)?;
    let size = model.config().image_size;
    let inputs = with_trainable(Tensor::uniform(&[2, 3, size, size], 0.0, 1.0, 30)?, model.params());
    s.run("simplegrowth", MODEL_TOLERANCE, MODEL_STEP, &inputs, |g, v| {
        let params = bind_params(g, model.params(), &v[1..]);
        let mut ctx = Ctx::new(g, params, Mode::Train);
        let y = model.forward_graph(&mut ctx, v[0], 4)?;
        mse(ctx.graph, y, v[0])
    })?;
    Ok(s.checks)
}

/// `x` followed by the trainable tensors of `store`.
fn with_trainable(x: Tensor<f64>, store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    let mut inputs = vec![x];
    inputs.extend(store.trainable().into_iter().map(|id| store.get(id).clone()));
    inputs
}

/// One var per store entry: the checked inputs for trainable tensors,
/// constants for running statistics.
fn bind_params(g: &mut Graph<f64>, store: &ParamStore<f64>, trainable: &[Var]) -> Vec<Var> {
    let mut next = trainable.iter();
    store
        .entries()
        .iter()
        .map(|e| match e.kind {
            ParamKind::Trainable => *next.next().expect("one var per trainable tensor"),
            _ => g.constant(e.value.clone()),
        })
        .collect()
}

/// Gives every trainable tensor nonzero random values so biases and batch
/// norm affine terms are exercised away from their initial constants.
fn randomize(store: &mut ParamStore<f64>, seed: u64) -> Result<()> {
    for id in store.trainable() {
        let t = store.get(id);
        let noise = Tensor::uniform(t.shape(), -0.3, 0.3, seed + id.0 as u64)?;
        let v = t.add(&noise)?;
        store.set(id, v)?;
    }
    Ok(())
}
