//! Versioned TOML run configuration. Every table rejects unknown keys.

use std::path::Path;

use serde::Deserialize;

use cumrisk::credit::HorizonConfig;
use cumrisk::env::EnvSpec;
use cumrisk::estimator::{Activation, EstimatorConfig, LossWeights};
use cumrisk::evaluation::{DEFAULT_INTERVALS, DEFAULT_THRESHOLDS};
use cumrisk::training::TrainConfig;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub env: Option<EnvSpec>,
    pub gen: Option<GenSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub episodes: usize,
}

fn default_heads() -> usize {
    20
}
fn default_lambda() -> f64 {
    0.8
}
fn default_trunc() -> usize {
    10
}
fn default_backbone() -> Vec<usize> {
    vec![64, 64]
}
fn default_head_layers() -> Vec<usize> {
    vec![16, 1]
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_epochs() -> usize {
    20
}
fn default_samples() -> usize {
    4000
}
fn default_batch() -> usize {
    8
}
fn default_lr_start() -> f64 {
    1e-3
}
fn default_lr_end() -> f64 {
    1e-4
}
fn default_eval_fraction() -> f64 {
    0.2
}

/// Training knobs; input width and step length come from the episode file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_trunc")]
    pub trunc_n: usize,
    #[serde(default = "default_backbone")]
    pub backbone_layers: Vec<usize>,
    #[serde(default = "default_head_layers")]
    pub head_layers: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_samples")]
    pub samples_per_epoch: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    /// Write the checkpoint every this many epochs; 0 writes only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl TrainSection {
    /// Pins the hyperparameters of the published corridor experiments.
    pub fn paper_parity(&mut self) {
        self.n_heads = 20;
        self.lambda = 0.8;
        self.trunc_n = 10;
        self.loss = LossWeights { c_i: 1.0, c_c: 1.0, p_c: 0.25, p_nc: 0.025 };
        self.lr_start = 1e-5;
        self.lr_end = 1e-6;
        self.epochs = 50;
        self.samples_per_epoch = 6000;
        self.batch_size = 2;
    }

    pub fn to_train_config(&self, input_dim: usize, delta_t: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            horizon: HorizonConfig { delta_t, n_heads: self.n_heads, lambda: self.lambda, trunc_n: self.trunc_n },
            estimator: EstimatorConfig {
                input_dim,
                backbone_layers: self.backbone_layers.clone(),
                head_layers: self.head_layers.clone(),
                n_heads: self.n_heads,
                activation: self.activation,
                init_seed: seed,
            },
            loss: self.loss,
            epochs: self.epochs,
            samples_per_epoch: self.samples_per_epoch,
            batch_size: self.batch_size,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            eval_fraction: self.eval_fraction,
            master_seed: seed,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Seconds before the collision, `[start, end]` pairs.
    #[serde(default = "default_intervals")]
    pub intervals: Vec<[f64; 2]>,
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

fn default_intervals() -> Vec<[f64; 2]> {
    DEFAULT_INTERVALS.iter().map(|&(a, b)| [a, b]).collect()
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { thresholds: default_thresholds(), intervals: default_intervals() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        if let Some(env) = &cfg.env {
            env.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn env(&self) -> Result<&EnvSpec, CliError> {
        self.env.as_ref().ok_or_else(|| CliError::Config("missing [env] table".into()))
    }
}
