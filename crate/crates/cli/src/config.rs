//! Flags, config files and the resolved experiment configuration.
//!
//! A config file is flat `key = value` text using the long flag names
//! (`arch = resnet`, `epochs = 300`); `#` starts a comment. Flags given on
//! the command line override the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};
use graphcnn::data::{DegreeEncoding, LambdaMode, DEFAULT_BATCH_SIZE, DEFAULT_DEGREE_CAP};
use graphcnn::model::{Architecture, InceptionWidth, ModelSpec, Readout, Shortcut};
use graphcnn::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DATA_ROOT_ENV: &str = "GRAPHCNN_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReadoutArg {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShortcutArg {
    /// Project `T_K(L̃) X`.
    Cheb,
    /// Project the raw block input.
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InceptionWidthArg {
    Full,
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DegreeArg {
    OneHot,
    Raw,
}

/// Flags shared by every command. All are optional so that a config file
/// and built-in defaults can fill the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat key = value file with defaults for any of these flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset name (MUTAG, PTC, NCI109, ENZYMES, COLLAB, IMDB-BINARY, IMDB-MULTI or any TU prefix).
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// Directory holding TU datasets [default: $GRAPHCNN_DATA_ROOT or ./data].
    #[arg(long, global = true, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub arch: Option<Architecture>,
    /// Number of convolution layers.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    /// Receptive field K.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub momentum: Option<f64>,
    /// Learning-rate decay factor.
    #[arg(long, global = true)]
    pub decay: Option<f64>,
    /// Epochs between decays.
    #[arg(long, global = true)]
    pub decay_every: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Folds trained in parallel [default: min(folds, cores)].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub readout: Option<ReadoutArg>,
    #[arg(long, global = true)]
    pub shortcut: Option<ShortcutArg>,
    #[arg(long, global = true)]
    pub inception_width: Option<InceptionWidthArg>,
    /// Comma-separated channel widths overriding the default plan.
    #[arg(long, global = true, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    /// Largest degree bucket of degree features.
    #[arg(long, global = true)]
    pub degree_cap: Option<usize>,
    #[arg(long, global = true)]
    pub degree_features: Option<DegreeArg>,
    /// Laplacian scaling: a positive number or "exact".
    #[arg(long, global = true)]
    pub lambda_max: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Parser)]
#[command(no_binary_name = true)]
struct FileArgs {
    #[command(flatten)]
    opts: Options,
}

impl Options {
    /// Fills unset fields from `base`.
    pub fn or(self, base: Options) -> Options {
        Options {
            config: self.config.or(base.config),
            dataset: self.dataset.or(base.dataset),
            data_root: self.data_root.or(base.data_root),
            arch: self.arch.or(base.arch),
            depth: self.depth.or(base.depth),
            k: self.k.or(base.k),
            epochs: self.epochs.or(base.epochs),
            lr: self.lr.or(base.lr),
            momentum: self.momentum.or(base.momentum),
            decay: self.decay.or(base.decay),
            decay_every: self.decay_every.or(base.decay_every),
            batch_size: self.batch_size.or(base.batch_size),
            seed: self.seed.or(base.seed),
            folds: self.folds.or(base.folds),
            jobs: self.jobs.or(base.jobs),
            out: self.out.or(base.out),
            precision: self.precision.or(base.precision),
            dropout: self.dropout.or(base.dropout),
            readout: self.readout.or(base.readout),
            shortcut: self.shortcut.or(base.shortcut),
            inception_width: self.inception_width.or(base.inception_width),
            channels: self.channels.or(base.channels),
            degree_cap: self.degree_cap.or(base.degree_cap),
            degree_features: self.degree_features.or(base.degree_features),
            lambda_max: self.lambda_max.or(base.lambda_max),
            dry_run: self.dry_run || base.dry_run,
        }
    }

    /// Merges the config file named by `--config`, if any.
    pub fn with_config_file(self) -> CliResult<Options> {
        match &self.config {
            Some(path) => {
                let file = parse_config_file(path)?;
                Ok(self.or(file))
            }
            None => Ok(self),
        }
    }
}

/// Parses a flat key = value file with the same value syntax as the flags.
pub fn parse_config_file(path: &Path) -> CliResult<Options> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_config_text(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn parse_config_text(text: &str) -> Result<Options, String> {
    let mut argv: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!(
                "line {}: config files cannot include others",
                i + 1
            ));
        }
        if key == "dry-run" {
            match value {
                "true" => argv.push("--dry-run".into()),
                "false" => {}
                _ => return Err(format!("line {}: dry-run must be true or false", i + 1)),
            }
            continue;
        }
        argv.push(format!("--{key}"));
        argv.push(value.to_string());
    }
    FileArgs::try_parse_from(argv)
        .map(|a| a.opts)
        .map_err(|e| e.to_string().lines().next().unwrap_or("").to_string())
}

/// Everything a run needs, resolved and validated before any training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_root: PathBuf,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub folds: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub precision: Precision,
    pub degree_cap: usize,
    pub degree_features: DegreeEncoding,
}

fn default_jobs(folds: usize) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    folds.min(cores).max(1)
}

fn parse_lambda(s: &str) -> CliResult<LambdaMode> {
    if s.eq_ignore_ascii_case("exact") {
        return Ok(LambdaMode::Exact);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(LambdaMode::Fixed(v)),
        _ => Err(CliError::config(format!(
            "lambda-max must be a positive number or \"exact\", got {s:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Applies defaults and validates. The dataset is not read here; the
    /// model's class count is filled in once it is.
    pub fn resolve(opts: &Options) -> CliResult<Self> {
        let dataset = opts
            .dataset
            .clone()
            .ok_or_else(|| CliError::config("no dataset given (use --dataset)"))?;
        let data_root = opts
            .data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        let arch = opts.arch.unwrap_or(Architecture::Plain);
        let mut model = ModelSpec::new(arch, 2);
        if let Some(d) = opts.depth {
            model.depth = d;
        }
        if let Some(k) = opts.k {
            model.k = k;
        }
        if let Some(p) = opts.dropout {
            model.dropout = p;
        }
        model.channel_plan = opts.channels.clone();
        model.readout = match opts.readout {
            Some(ReadoutArg::Sum) => Readout::Sum,
            _ => Readout::Mean,
        };
        model.shortcut = match opts.shortcut {
            Some(ShortcutArg::Input) => Shortcut::Input,
            _ => Shortcut::ChebOrderK,
        };
        model.inception_width = match opts.inception_width {
            Some(InceptionWidthArg::Quarter) => InceptionWidth::Quarter,
            _ => InceptionWidth::Full,
        };
        let seed = opts.seed.unwrap_or(0);
        model.seed = seed;
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: opts.epochs.unwrap_or(defaults.epochs),
            learning_rate: opts.lr.unwrap_or(defaults.learning_rate),
            momentum: opts.momentum.unwrap_or(defaults.momentum),
            decay_rate: opts.decay.unwrap_or(defaults.decay_rate),
            decay_every: opts.decay_every.unwrap_or(defaults.decay_every),
            batch_size: opts.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            seed,
            lambda: match &opts.lambda_max {
                Some(s) => parse_lambda(s)?,
                None => LambdaMode::default(),
            },
        };
        let folds = opts.folds.unwrap_or(10);
        let cfg = Self {
            out: opts
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(format!("{dataset}-{arch}"))),
            dataset,
            data_root,
            model,
            train,
            folds,
            jobs: opts.jobs.unwrap_or_else(|| default_jobs(folds)),
            precision: opts.precision.unwrap_or_default(),
            degree_cap: opts.degree_cap.unwrap_or(DEFAULT_DEGREE_CAP),
            degree_features: match opts.degree_features {
                Some(DegreeArg::Raw) => DegreeEncoding::Raw,
                _ => DegreeEncoding::OneHot,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(CliError::config(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.jobs == 0 {
            return Err(CliError::config("jobs must be at least 1"));
        }
        Ok(())
    }

    /// Spec and training config of one fold: seeds are offset by the fold
    /// index.
    pub fn for_fold(&self, fold: usize) -> (ModelSpec, TrainConfig) {
        let seed = self.train.seed.wrapping_add(fold as u64);
        let mut spec = self.model.clone();
        spec.seed = seed;
        let train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        (spec, train)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> Options {
        Options {
            dataset: Some("MUTAG".into()),
            ..Options::default()
        }
    }

    #[test]
    fn defaults_follow_the_training_protocol() {
        let c = ExperimentConfig::resolve(&opts()).unwrap();
        assert_eq!(c.train.epochs, 300);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.train.decay_rate, 0.95);
        assert_eq!(c.train.decay_every, 10);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.folds, 10);
        assert_eq!(c.model.k, 6);
        assert_eq!(c.model.depth, 6);
        assert_eq!(c.model.dropout, 0.5);
        assert_eq!(c.precision, Precision::F64);
    }

    #[test]
    fn config_text_parses_and_cli_wins() {
        let file = parse_config_text(
            "# experiment\narch = resnet\ndepth=12\nbatch_size = 16 # smaller\nlambda-max = exact\n",
        )
        .unwrap();
        assert_eq!(file.arch, Some(Architecture::Resnet));
        assert_eq!(file.batch_size, Some(16));
        let cli = Options {
            depth: Some(9),
            ..opts()
        };
        let merged = cli.or(file);
        let c = ExperimentConfig::resolve(&merged).unwrap();
        assert_eq!(c.model.architecture, Architecture::Resnet);
        assert_eq!(c.model.depth, 9);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.lambda, LambdaMode::Exact);
    }

    #[test]
    fn bad_config_lines_are_reported() {
        assert!(parse_config_text("arch resnet")
            .unwrap_err()
            .contains("line 1"));
        assert!(parse_config_text("arch = vgg").is_err());
        assert!(parse_config_text("colour = blue").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let bad = Options {
            depth: Some(5),
            ..opts()
        };
        assert!(matches!(
            ExperimentConfig::resolve(&bad),
            Err(CliError::Config(_))
        ));
        let bad = Options {
            folds: Some(1),
            ..opts()
        };
        assert!(ExperimentConfig::resolve(&bad).is_err());
        assert!(ExperimentConfig::resolve(&Options::default()).is_err());
    }

    #[test]
    fn fold_seeds_are_offset() {
        let c = ExperimentConfig::resolve(&Options {
            seed: Some(7),
            ..opts()
        })
        .unwrap();
        let (spec, train) = c.for_fold(3);
        assert_eq!(spec.seed, 10);
        assert_eq!(train.seed, 10);
    }
}
