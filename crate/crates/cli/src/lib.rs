//! Commands behind the `simplegrowth` binary. Each returns the text it
//! prints on success, or a [`CliError`] carrying the process exit code.

pub mod gradient_suite;
pub mod run_config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use simplegrowth::data::{write_ppm_grid, Dataset};
use simplegrowth::layers::Mode;
use simplegrowth::metrics::{batch_ssim, image_frechet, Embedder, SsimConfig};
use simplegrowth::model::{interpolate, load_checkpoint, sample_uniform_latents, SimpleGrowth};
use simplegrowth::train::{train_loop, CHECKPOINT_FILE, METRICS_FILE};
use simplegrowth::{Error, Tensor};

pub use gradient_suite::{run_gradient_suite, Check};
pub use run_config::{DataSpec, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_METRIC: i32 = 5;

pub const RUN_LOG: &str = "run.log";
/// Tiles in an interpolation grid unless overridden.
pub const INTERPOLATION_STEPS: usize = 16;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn fail(code: i32, e: impl fmt::Display) -> CliError {
    CliError {
        code,
        message: e.to_string(),
    }
}

/// Argument errors are the caller's fault whatever stage raised them.
fn stage(code: i32) -> impl Fn(Error) -> CliError {
    move |e| match e {
        Error::Argument(_) => fail(EXIT_CONFIG, e),
        _ => fail(code, e),
    }
}

fn load_model(path: &Path) -> CliResult<SimpleGrowth<f32>> {
    load_checkpoint::<f32>(path)
        .map(|c| c.model)
        .map_err(|e| fail(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))
}

fn load_data(spec: &DataSpec, train: bool) -> CliResult<Dataset> {
    spec.load(train).map_err(|e| fail(EXIT_DATA, format!("{spec}: {e}")))
}

fn check_size(model: &SimpleGrowth<f32>, data: &Dataset) -> CliResult<()> {
    let want = model.config().image_size;
    if data.image_size() != want {
        return Err(fail(
            EXIT_DATA,
            format!("model expects {want}x{want} images, data has {0}x{0}", data.image_size()),
        ));
    }
    Ok(())
}

fn write_grid(images: &Tensor<f32>, cols: Option<usize>, out: &Path) -> CliResult<()> {
    write_ppm_grid(images, cols, out).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", out.display())))
}

/// Trains from a run file. Data is loaded before anything is written, so a
/// data failure leaves `out` untouched.
pub fn cmd_train(config: &Path, out: &Path) -> CliResult<String> {
    let cfg = RunConfig::load(config).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", config.display())))?;
    let mut train = load_data(&cfg.train_data, true)?;
    let eval = load_data(&cfg.eval_data, false)?;
    if let Some(n) = cfg.train_subset {
        train = train.head(n).map_err(|e| fail(EXIT_DATA, format!("train_subset: {e}")))?;
    }
    let mut model = SimpleGrowth::<f32>::new(cfg.model.clone(), cfg.train.seed).map_err(stage(EXIT_CONFIG))?;
    check_size(&model, &train)?;
    check_size(&model, &eval)?;

    fs::create_dir_all(out).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", out.display())))?;
    // the header alone is a run file that replays this run
    let header = cfg.echo();
    fs::write(out.join(RUN_LOG), &header).map_err(|e| fail(EXIT_DATA, e))?;

    let start = Instant::now();
    let report = train_loop(&mut model, &train, &eval, &cfg.train, Some(out)).map_err(|e| match e {
        Error::Config(_) | Error::Argument(_) => fail(EXIT_CONFIG, e),
        Error::Numerical(_) => fail(EXIT_METRIC, e),
        _ => fail(EXIT_DATA, e),
    })?;
    let summary = format!(
        "iterations={} first_mse={:.6} final_mse={:.6} seconds={:.1} metrics={} checkpoint={}",
        report.iterations(),
        report.first_mse(),
        report.final_mse(),
        start.elapsed().as_secs_f64(),
        out.join(METRICS_FILE).display(),
        out.join(CHECKPOINT_FILE).display(),
    );
    let mut log = header;
    for (i, loss) in report.losses.iter().enumerate() {
        log.push_str(&format!("# iteration {} loss {loss:.8}\n", i + 1));
    }
    log.push_str("# ");
    log.push_str(&summary);
    log.push('\n');
    fs::write(out.join(RUN_LOG), log).map_err(|e| fail(EXIT_DATA, e))?;
    Ok(summary)
}

fn first_images(data: &Dataset, count: usize) -> CliResult<Tensor<f32>> {
    if count == 0 || count > data.len() {
        return Err(fail(
            EXIT_CONFIG,
            format!("count {count} must be between 1 and the {} available images", data.len()),
        ));
    }
    Ok(data.head(count).map_err(stage(EXIT_DATA))?.images().clone())
}

/// Writes `count` originals beside their eval-mode reconstructions, one
/// pair per grid row.
pub fn cmd_reconstruct(checkpoint: &Path, data: &DataSpec, count: usize, out: &Path) -> CliResult<String> {
    let model = load_model(checkpoint)?;
    let data = load_data(data, false)?;
    check_size(&model, &data)?;
    let x = first_images(&data, count)?;
    let recon = model.reconstruct(&x, 16).map_err(stage(EXIT_DATA))?;
    let mut tiles = Vec::with_capacity(2 * count);
    for i in 0..count {
        tiles.push(x.narrow(0, i, i + 1).map_err(stage(EXIT_DATA))?);
        tiles.push(recon.narrow(0, i, i + 1).map_err(stage(EXIT_DATA))?);
    }
    let refs: Vec<&Tensor<f32>> = tiles.iter().collect();
    let grid = Tensor::concat(&refs, 0).map_err(stage(EXIT_DATA))?;
    write_grid(&grid, Some(2), out)?;
    Ok(format!("wrote {} ({count} pairs)", out.display()))
}

/// Decodes `steps` points on the line from image `a`'s latent toward `b`'s.
pub fn interpolation_tiles(model: &SimpleGrowth<f32>, data: &Dataset, (a, b): (usize, usize), steps: usize) -> CliResult<Tensor<f32>> {
    for i in [a, b] {
        if i >= data.len() {
            return Err(fail(EXIT_CONFIG, format!("index {i} out of range for {} images", data.len())));
        }
    }
    let encode = |i: usize| {
        let x = data.gather(&[i])?;
        model.encode(&x, Mode::Eval, 0)
    };
    let z1 = encode(a).map_err(stage(EXIT_DATA))?;
    let z2 = encode(b).map_err(stage(EXIT_DATA))?;
    let zs = interpolate(&z1, &z2, steps).map_err(stage(EXIT_DATA))?;
    let refs: Vec<&Tensor<f32>> = zs.iter().collect();
    let z = Tensor::concat(&refs, 0).map_err(stage(EXIT_DATA))?;
    model.decode(&z).map_err(stage(EXIT_DATA))
}

pub fn cmd_interpolate(
    checkpoint: &Path,
    data: &DataSpec,
    indices: (usize, usize),
    steps: usize,
    out: &Path,
) -> CliResult<String> {
    let model = load_model(checkpoint)?;
    let data = load_data(data, false)?;
    check_size(&model, &data)?;
    let tiles = interpolation_tiles(&model, &data, indices, steps)?;
    write_grid(&tiles, None, out)?;
    Ok(format!("wrote {} ({steps} tiles)", out.display()))
}

/// Decodes `count` latents drawn uniformly from `[-1, 1]`.
pub fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out: &Path) -> CliResult<String> {
    let model = load_model(checkpoint)?;
    let z = sample_uniform_latents(count, model.config().latent_dim, seed).map_err(stage(EXIT_DATA))?;
    let images = model.decode(&z).map_err(stage(EXIT_DATA))?;
    write_grid(&images, None, out)?;
    Ok(format!("wrote {} ({count} samples)", out.display()))
}

/// One `key=value` line of reconstruction metrics on the first `count`
/// images.
pub fn cmd_eval(checkpoint: &Path, data: &DataSpec, count: usize, embedder: &str) -> CliResult<String> {
    let embedder: Embedder = embedder.parse().map_err(|e| fail(EXIT_METRIC, e))?;
    let model = load_model(checkpoint)?;
    let data = load_data(data, false)?;
    check_size(&model, &data)?;
    let x = first_images(&data, count)?;
    let recon = model.reconstruct(&x, 16).map_err(stage(EXIT_DATA))?;
    let (ssim, ms_ssim) = batch_ssim(&x, &recon, &SsimConfig::default()).map_err(|e| fail(EXIT_METRIC, e))?;
    let frechet = image_frechet(&x, &recon, &embedder).map_err(|e| fail(EXIT_METRIC, e))?;
    Ok(format!(
        "count={count} ssim={ssim:.6} ms_ssim={ms_ssim:.6} frechet={frechet:.6} embedder={embedder}"
    ))
}

/// Runs the gradient suite; `fault` corrupts one backward rule on purpose.
pub fn cmd_gradcheck(fault: Option<&str>) -> CliResult<String> {
    let start = Instant::now();
    let checks = run_gradient_suite(fault).map_err(|e| fail(EXIT_VERIFY, format!("gradient suite: {e}")))?;
    let mut text = String::new();
    for c in &checks {
        text.push_str(&format!(
            "{:<18} max_rel_err={:.3e} tolerance={:.0e} {}\n",
            c.name,
            c.error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        ));
    }
    text.push_str(&format!("seconds={:.1}", start.elapsed().as_secs_f64()));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        return Ok(text);
    }
    let mut msg = format!("{text}\ngradient check failed: {}", failed.join(", "));
    if let Some(op) = fault {
        msg.push_str(&format!(" (backward rule {op:?} corrupted)"));
    }
    Err(fail(EXIT_VERIFY, msg))
}

/// `A,B` as two indices.
pub fn parse_indices(s: &str) -> CliResult<(usize, usize)> {
    let bad = || fail(EXIT_CONFIG, format!("expected --indices A,B, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Default location of a checkpoint written by `train --out DIR`.
pub fn checkpoint_in(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}
