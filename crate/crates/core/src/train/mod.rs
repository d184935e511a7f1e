//! MSE loss, Adam, and the training loop with CSV metric logging.

mod adam;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::config::KvLine;
use crate::data::{epoch_batches, Dataset};
use crate::error::{config_err, shape_err, Error, Result};
use crate::layers::{Ctx, Mode};
use crate::metrics::{batch_ssim, image_frechet, Embedder, SsimConfig};
use crate::model::{save_checkpoint, SimpleGrowth};
use crate::rng::mix_seed;
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use adam::{adam_step, AdamConfig, AdamState};

pub const CSV_HEADER: &str = "iteration,epoch,mse,ssim,ms_ssim,frechet";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.sgck";

/// Mean squared error between two equally shaped tensors.
pub fn mse<T: Scalar>(g: &mut Graph<T>, prediction: Var, target: Var) -> Result<Var> {
    if g.value(prediction).shape() != g.value(target).shape() {
        return shape_err(format!(
            "mse operands differ in shape: {:?} vs {:?}",
            g.value(prediction).shape(),
            g.value(target).shape()
        ));
    }
    let d = g.sub(prediction, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

pub fn mse_value<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return shape_err(format!(
            "mse operands differ in shape: {:?} vs {:?}",
            prediction.shape(),
            target.shape()
        ));
    }
    Ok(prediction.sub(target)?.map(|v| v * v).mean())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Iterations between metric rows.
    pub metric_interval: usize,
    /// Held-out images reconstructed for each metric row.
    pub eval_sample_count: usize,
    /// Iterations between checkpoint writes; the final state is always saved.
    pub checkpoint_interval: usize,
    /// Stops early after this many iterations.
    pub max_iterations: Option<usize>,
    /// `None` leaves the frechet column `NaN`.
    pub embedder: Option<Embedder>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 48,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            metric_interval: 500,
            eval_sample_count: 4096,
            checkpoint_interval: 5000,
            max_iterations: None,
            embedder: Some(Embedder::RawPool),
        }
    }
}

pub const TRAIN_KEYS: [&str; 11] = [
    "epochs",
    "batch_size",
    "lr",
    "betas",
    "adam_eps",
    "seed",
    "metric_interval",
    "eval_sample_count",
    "checkpoint_interval",
    "max_iterations",
    "embedder",
];

impl TrainConfig {
    /// Applies one config line. Returns `false` for keys this type does not own.
    pub fn set(&mut self, kv: &KvLine) -> Result<bool> {
        match kv.key.as_str() {
            "epochs" => self.epochs = kv.parse()?,
            "batch_size" => self.batch_size = kv.parse()?,
            "lr" => self.adam.lr = kv.parse()?,
            "betas" => match kv.parse_list::<f64>()?[..] {
                [b1, b2] => (self.adam.beta1, self.adam.beta2) = (b1, b2),
                _ => return Err(kv.error("expected two comma-separated values")),
            },
            "adam_eps" => self.adam.eps = kv.parse()?,
            "seed" => self.seed = kv.parse()?,
            "metric_interval" => self.metric_interval = kv.parse()?,
            "eval_sample_count" => self.eval_sample_count = kv.parse()?,
            "checkpoint_interval" => self.checkpoint_interval = kv.parse()?,
            "max_iterations" => {
                self.max_iterations = match kv.value.as_str() {
                    "none" => None,
                    _ => Some(kv.parse()?),
                }
            }
            "embedder" => {
                self.embedder = match kv.value.as_str() {
                    "none" => None,
                    v => Some(v.parse().map_err(|e| kv.error(e))?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.adam.lr)),
            ("betas", format!("{:?},{:?}", self.adam.beta1, self.adam.beta2)),
            ("adam_eps", format!("{:?}", self.adam.eps)),
            ("seed", self.seed.to_string()),
            ("metric_interval", self.metric_interval.to_string()),
            ("eval_sample_count", self.eval_sample_count.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("max_iterations", opt(self.max_iterations.map(|v| v.to_string()))),
            ("embedder", opt(self.embedder.as_ref().map(|e| e.to_string()))),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("metric_interval", self.metric_interval),
            ("eval_sample_count", self.eval_sample_count),
            ("checkpoint_interval", self.checkpoint_interval),
        ] {
            if v == 0 {
                return config_err(format!("{name} must be at least 1"));
            }
        }
        if self.max_iterations == Some(0) {
            return config_err("max_iterations must be at least 1");
        }
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) {
            return config_err(format!("lr must be positive, got {}", a.lr));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return config_err(format!("betas must lie in [0, 1), got {},{}", a.beta1, a.beta2));
        }
        if !(a.eps.is_finite() && a.eps > 0.0) {
            return config_err(format!("adam_eps must be positive, got {}", a.eps));
        }
        Ok(())
    }
}

/// Optimizer bound to one model's trainable parameters.
pub struct Trainer {
    pub adam: AdamConfig,
    pub state: AdamState<f32>,
}

impl Trainer {
    pub fn new(model: &SimpleGrowth<f32>, adam: AdamConfig) -> Self {
        let params: Vec<Tensor<f32>> = model
            .params()
            .trainable()
            .into_iter()
            .map(|id| model.params().get(id).clone())
            .collect();
        Trainer {
            adam,
            state: AdamState::zeros(&params),
        }
    }

    /// One train-mode forward/backward pass and Adam update on `batch`.
    /// Returns the batch loss before the update.
    pub fn step(&mut self, model: &mut SimpleGrowth<f32>, batch: &Tensor<f32>, noise_seed: u64) -> Result<f64> {
        model.check_input(batch)?;
        let ids = model.params().trainable();
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, model.params(), true, Mode::Train);
        let x = ctx.graph.constant(batch.clone());
        let y = model.forward_graph(&mut ctx, x, noise_seed)?;
        let loss = mse(ctx.graph, y, x)?;
        let vars = ctx.params.clone();
        let bn_updates = std::mem::take(&mut ctx.bn_updates);
        let loss_value = g.value(loss).item()?.widen();
        if !loss_value.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss_value}")));
        }
        g.backward(loss)?;
        let mut params = Vec::with_capacity(ids.len());
        let mut grads = Vec::with_capacity(ids.len());
        for &id in &ids {
            let p = model.params().get(id).clone();
            grads.push(g.grad(vars[id.0]).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())));
            params.push(p);
        }
        adam_step(&mut params, &grads, &mut self.state, &self.adam)?;
        for (id, p) in ids.into_iter().zip(params) {
            model.params_mut().set(id, p)?;
        }
        model.params_mut().apply_bn_updates(&bn_updates)?;
        Ok(loss_value)
    }

    /// Optimizer buffers named after their parameters.
    pub fn named_state(&self, model: &SimpleGrowth<f32>) -> Vec<(String, Tensor<f32>)> {
        let names: Vec<&str> = model
            .params()
            .trainable()
            .into_iter()
            .map(|id| model.params().entry(id).name.as_str())
            .collect();
        self.state.to_named(&names)
    }
}

/// Per-iteration noise key.
pub fn noise_seed(seed: u64, epoch: usize, iteration: usize) -> u64 {
    mix_seed(seed, &[0x7015e, epoch as u64, iteration as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub epoch: usize,
    /// Mean training loss since the previous row.
    pub mse: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub frechet: f64,
}

impl MetricRow {
    pub fn csv(&self) -> String {
        let f = |v: f64| if v.is_nan() { "NaN".to_string() } else { format!("{v:?}") };
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            f(self.mse),
            f(self.ssim),
            f(self.ms_ssim),
            f(self.frechet)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Batch loss of every iteration.
    pub losses: Vec<f64>,
    pub rows: Vec<MetricRow>,
    /// The CSV log as written.
    pub csv: String,
    pub last_checkpoint: Option<PathBuf>,
    /// Batches in one pass over the training set.
    pub batches_per_epoch: usize,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    pub fn first_mse(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    /// Running loss: the mean over the last epoch's worth of iterations.
    pub fn final_mse(&self) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(self.batches_per_epoch.max(1))..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Eval-mode SSIM, MS-SSIM and Fréchet distance on `images`.
pub fn evaluate(
    model: &SimpleGrowth<f32>,
    images: &Tensor<f32>,
    batch_size: usize,
    embedder: Option<&Embedder>,
) -> Result<(f64, f64, f64)> {
    let recon = model.reconstruct(images, batch_size)?;
    let (s, ms) = batch_ssim(images, &recon, &SsimConfig::default())?;
    let fd = match embedder {
        Some(e) => image_frechet(images, &recon, e)?,
        None => f64::NAN,
    };
    Ok((s, ms, fd))
}

struct Outputs {
    dir: PathBuf,
    csv: File,
    last_checkpoint: Option<PathBuf>,
}

impl Outputs {
    fn fail(&self, what: &str, e: Error) -> Error {
        let last = match &self.last_checkpoint {
            Some(p) => p.display().to_string(),
            None => "none".into(),
        };
        match e {
            Error::Io(io) => Error::Io(io::Error::new(
                io.kind(),
                format!("{what} in {}: {io}; last good checkpoint: {last}", self.dir.display()),
            )),
            other => other,
        }
    }
}

/// Trains `model` on `train`, logging metrics on the first
/// `cfg.eval_sample_count` images of `eval`. With `out_dir` set, the CSV
/// log and checkpoints are written there as training proceeds.
pub fn train_loop(
    model: &mut SimpleGrowth<f32>,
    train: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.eval_sample_count > eval.len() {
        return config_err(format!(
            "eval_sample_count {} exceeds the {} held-out images",
            cfg.eval_sample_count,
            eval.len()
        ));
    }
    let eval_images = eval.head(cfg.eval_sample_count)?.images().clone();
    let mut out = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut csv = File::create(dir.join(METRICS_FILE))?;
            writeln!(csv, "{CSV_HEADER}")?;
            Some(Outputs {
                dir: dir.to_path_buf(),
                csv,
                last_checkpoint: None,
            })
        }
        None => None,
    };
    let mut trainer = Trainer::new(model, cfg.adam);
    let mut report = TrainReport {
        losses: Vec::new(),
        rows: Vec::new(),
        csv: format!("{CSV_HEADER}\n"),
        last_checkpoint: None,
        batches_per_epoch: train.len().div_ceil(cfg.batch_size),
    };
    let limit = cfg.max_iterations.unwrap_or(usize::MAX);
    let mut since_row = 0.0;
    let mut iteration = 0;
    'epochs: for epoch in 0..cfg.epochs {
        for idx in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            if iteration == limit {
                break 'epochs;
            }
            iteration += 1;
            let batch = train.gather(&idx)?;
            let loss = trainer.step(model, &batch, noise_seed(cfg.seed, epoch, iteration))?;
            report.losses.push(loss);
            since_row += loss;

            if iteration % cfg.metric_interval == 0 {
                let (ssim, ms_ssim, frechet) = evaluate(model, &eval_images, cfg.batch_size, cfg.embedder.as_ref())?;
                let row = MetricRow {
                    iteration,
                    epoch,
                    mse: since_row / cfg.metric_interval as f64,
                    ssim,
                    ms_ssim,
                    frechet,
                };
                since_row = 0.0;
                let line = row.csv();
                writeln!(report.csv, "{line}").expect("writing to a String");
                if let Some(o) = out.as_mut() {
                    writeln!(o.csv, "{line}")
                        .and_then(|_| o.csv.flush())
                        .map_err(|e| o.fail("writing the metric log", e.into()))?;
                }
                report.rows.push(row);
            }
            if iteration % cfg.checkpoint_interval == 0 {
                if let Some(o) = out.as_mut() {
                    checkpoint(o, model, &trainer, iteration)?;
                }
            }
        }
    }
    if let Some(o) = out.as_mut() {
        if iteration % cfg.checkpoint_interval != 0 {
            checkpoint(o, model, &trainer, iteration)?;
        }
        report.last_checkpoint = o.last_checkpoint.clone();
    }
    Ok(report)
}

fn checkpoint(o: &mut Outputs, model: &SimpleGrowth<f32>, trainer: &Trainer, iteration: usize) -> Result<()> {
    let path = o.dir.join(CHECKPOINT_FILE);
    save_checkpoint(&path, model, &trainer.named_state(model), iteration as u32)
        .map_err(|e| o.fail("writing a checkpoint", e))?;
    o.last_checkpoint = Some(path);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_use_nan_literal() {
        let row = MetricRow {
            iteration: 3,
            epoch: 0,
            mse: 0.25,
            ssim: 0.5,
            ms_ssim: f64::NAN,
            frechet: 1.0,
        };
        assert_eq!(row.csv(), "3,0,0.25,0.5,NaN,1.0");
    }

    #[test]
    fn config_keys_round_trip() {
        let mut c = TrainConfig::default();
        for kv in crate::config::parse_kv("betas = 0.9, 0.99\nembedder = none\nmax_iterations = 7").unwrap() {
            assert!(c.set(&kv).unwrap());
        }
        assert_eq!((c.adam.beta1, c.adam.beta2, c.embedder.clone(), c.max_iterations), (0.9, 0.99, None, Some(7)));
        let echoed: Vec<&str> = c.echo().iter().map(|(k, _)| *k).collect();
        assert_eq!(echoed, TRAIN_KEYS);
        let mut d = TrainConfig::default();
        for kv in crate::config::parse_kv(&crate::config::render_kv(c.echo())).unwrap() {
            d.set(&kv).unwrap();
        }
        assert_eq!(c, d);
    }
}
