//! The `key = value` run file read by `train`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use simplegrowth::config::{parse_kv, render_kv};
use simplegrowth::data::{
    cifar10_files, load_cifar10_bin, load_image_tensor, parse_cifar10, synthetic_cifar10, Dataset, TENSOR_FILE_MAGIC,
};
use simplegrowth::model::SimpleGrowthConfig;
use simplegrowth::train::TrainConfig;
use simplegrowth::{Error, Result};

/// Where images come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSpec {
    /// A CIFAR-10 batch directory, a CIFAR-10 `.bin` file or a tensor file.
    Path(PathBuf),
    /// `synthetic:COUNT:SEED`, the procedural CIFAR-10 stand-in.
    Synthetic { count: usize, seed: u64 },
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Path(p) => write!(f, "{}", p.display()),
            DataSpec::Synthetic { count, seed } => write!(f, "synthetic:{count}:{seed}"),
        }
    }
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let bad = || Error::Config(format!("expected synthetic:COUNT:SEED, got {s:?}"));
            let (count, seed) = rest.split_once(':').ok_or_else(bad)?;
            return Ok(DataSpec::Synthetic {
                count: count.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            });
        }
        if s.is_empty() {
            return Err(Error::Config("empty data path".into()));
        }
        Ok(DataSpec::Path(s.into()))
    }
}

impl DataSpec {
    /// Loads the images. A CIFAR-10 directory yields its five training
    /// batches, or the test batch when `train` is false.
    pub fn load(&self, train: bool) -> Result<Dataset> {
        match self {
            DataSpec::Synthetic { count, seed } => {
                // distinct streams for the two splits
                let seed = if train { *seed } else { seed ^ 0x7e57 };
                parse_cifar10(&synthetic_cifar10(*count, seed), 0)
            }
            DataSpec::Path(p) if p.is_dir() => load_cifar10_bin(&cifar10_files(p, train)),
            DataSpec::Path(p) => {
                let head = fs::read(p)?;
                if head.starts_with(TENSOR_FILE_MAGIC) {
                    load_image_tensor(p)
                } else {
                    load_cifar10_bin(&[p])
                }
            }
        }
    }

    fn resolved(self, base: &Path) -> DataSpec {
        match self {
            DataSpec::Path(p) if p.is_relative() => DataSpec::Path(base.join(p)),
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: SimpleGrowthConfig,
    pub train: TrainConfig,
    pub train_data: DataSpec,
    /// Held-out images for metric rows.
    pub eval_data: DataSpec,
    /// Train on only the first N images.
    pub train_subset: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cifar = DataSpec::Path("cifar-10-batches-bin".into());
        RunConfig {
            model: SimpleGrowthConfig::cifar32(),
            train: TrainConfig::default(),
            train_data: cifar.clone(),
            eval_data: cifar,
            train_subset: None,
        }
    }
}

impl RunConfig {
    /// Parses run-file text. Relative data paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        let lines = parse_kv(text)?;
        // a preset replaces the model defaults before individual keys apply
        if let Some(kv) = lines.iter().find(|kv| kv.key == "preset") {
            c.model = match kv.value.as_str() {
                "cifar32" => SimpleGrowthConfig::cifar32(),
                "celeba64" => SimpleGrowthConfig::celeba64(),
                "smoke" => SimpleGrowthConfig::smoke(),
                "gradcheck" => SimpleGrowthConfig::gradcheck(),
                v => return Err(kv.error(format_args!("unknown preset {v:?}"))),
            };
        }
        for kv in &lines {
            if kv.key == "preset" || c.model.set(kv)? || c.train.set(kv)? {
                continue;
            }
            match kv.key.as_str() {
                "train_data" => c.train_data = kv.value.parse().map_err(|e| kv.error(e))?,
                "eval_data" => c.eval_data = kv.value.parse().map_err(|e| kv.error(e))?,
                "train_subset" => {
                    c.train_subset = match kv.value.as_str() {
                        "all" => None,
                        _ => Some(kv.parse()?),
                    }
                }
                _ => return Err(kv.error("unknown key")),
            }
        }
        c.train_data = c.train_data.resolved(base);
        c.eval_data = c.eval_data.resolved(base);
        c.model.validate()?;
        c.train.validate()?;
        if c.train_subset == Some(0) {
            return Err(Error::Config("train_subset must be at least 1".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Every effective setting, in a form [`RunConfig::parse`] reads back.
    pub fn echo(&self) -> String {
        let mut pairs = self.model.echo();
        pairs.extend(self.train.echo());
        pairs.push(("train_data", self.train_data.to_string()));
        pairs.push(("eval_data", self.eval_data.to_string()));
        pairs.push((
            "train_subset",
            self.train_subset.map_or_else(|| "all".into(), |n| n.to_string()),
        ));
        render_kv(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reparses_to_the_same_config() {
        let text = "preset = smoke\nseed = 3\ntrain_data = synthetic:64:1\neval_data = data/test.bin\nlr = 0.002\n";
        let c = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.model, SimpleGrowthConfig::smoke());
        assert_eq!(c.eval_data, DataSpec::Path("/base/data/test.bin".into()));
        assert_eq!(RunConfig::parse(&c.echo(), Path::new("/elsewhere")).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let e = RunConfig::parse("seed = 1\n\nbogus = 2\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn data_spec_strings() {
        assert_eq!("synthetic:10:2".parse::<DataSpec>().unwrap(), DataSpec::Synthetic { count: 10, seed: 2 });
        assert!("synthetic:10".parse::<DataSpec>().is_err());
        assert_eq!("a/b.bin".parse::<DataSpec>().unwrap(), DataSpec::Path("a/b.bin".into()));
    }
}
