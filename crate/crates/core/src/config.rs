//! Flat `key=value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.

use std::path::Path;

use crate::data::FeatureKind;
use crate::denoiser::{Arch, DenoiserConfig};
use crate::error::{Error, Result};
use crate::guidance::{ClassifierConfig, ClassifierKind};
use crate::sampler::{SampleConfig, SampleMode, SigmaMode};
use crate::schedule::NoiseSchedule;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Mlp,
    UNet1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub steps_t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub arch: ArchKind,
    pub hidden: usize,
    pub layers: usize,
    pub channels: Vec<usize>,
    pub res_blocks: usize,
    pub kernel: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub train_steps: usize,
    pub tol: f64,
    pub weighted: bool,
    pub seed: u64,
    pub mode: SampleMode,
    pub sigma: SigmaMode,
    pub k: usize,
    pub samples: usize,
    pub ddim_literal: bool,
    pub guidance_scale: f64,
    pub threshold: f64,
    pub kind: FeatureKind,
    pub labeled: bool,
    pub header: bool,
    pub clf_kind: ClassifierKind,
    pub clf_hidden: usize,
    pub clf_steps: usize,
    pub clf_lr: f64,
    pub clf_time: bool,
    pub clf_embed_dim: usize,
    pub aug_step: usize,
    pub aug_pool: usize,
    /// Write `<out>.step<N>` every this many training steps; 0 disables.
    pub ckpt_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            steps_t: 200,
            beta_start: 1e-4,
            beta_end: 1e-2,
            arch: ArchKind::UNet1d,
            hidden: 256,
            layers: 3,
            channels: vec![32, 64],
            res_blocks: 2,
            kernel: 3,
            embed_dim: 32,
            time_dim: 64,
            lr: 1e-3,
            batch: 128,
            train_steps: 2000,
            tol: 0.0,
            weighted: false,
            seed: 0,
            mode: SampleMode::Ddim,
            sigma: SigmaMode::Posterior,
            k: 3,
            samples: 1000,
            ddim_literal: false,
            guidance_scale: 1.0,
            threshold: 0.5,
            kind: FeatureKind::Binary,
            labeled: false,
            header: false,
            clf_kind: ClassifierKind::Mlp { hidden: 64 },
            clf_hidden: 64,
            clf_steps: 1000,
            clf_lr: 1e-3,
            clf_time: true,
            clf_embed_dim: 16,
            aug_step: 100,
            aug_pool: 1000,
            ckpt_every: 0,
        }
    }
}

/// `(key, default, description)` for every recognized key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("T", "200", "diffusion steps"),
    ("beta_start", "1e-4", "first beta of the linear schedule"),
    ("beta_end", "1e-2", "last beta of the linear schedule"),
    ("arch", "unet1d", "denoiser architecture: mlp | unet1d"),
    ("hidden", "256", "mlp width"),
    ("layers", "3", "mlp hidden layers"),
    ("channels", "32,64", "unet channels per level"),
    ("res_blocks", "2", "unet residual blocks per level"),
    ("kernel", "3", "unet kernel size (odd)"),
    ("embed_dim", "32", "sinusoidal timestep features"),
    ("time_dim", "64", "time MLP width"),
    ("lr", "0.001", "Adam learning rate"),
    ("batch", "128", "minibatch size"),
    ("steps", "2000", "training steps"),
    ("tol", "0", "stop early once the batch loss is at most this (0 = never)"),
    ("weighted", "false", "use the variational-bound weighting of the loss"),
    ("seed", "0", "random seed"),
    ("mode", "ddim", "sampler: ddpm | ddim"),
    ("sigma", "posterior", "ddpm noise: posterior | zero"),
    ("k", "3", "Anderson table size for ddim sampling (0 disables)"),
    ("samples", "1000", "records to generate"),
    ("ddim_literal", "false", "use the literal alpha-bar DDIM coefficients"),
    ("guidance_scale", "1", "classifier guidance multiplier"),
    ("threshold", "0.5", "binarization threshold for binary data"),
    ("kind", "binary", "feature kind: binary | continuous"),
    ("labeled", "false", "final CSV column holds integer labels"),
    ("header", "false", "CSV files start with a header row"),
    ("clf_kind", "mlp", "guidance classifier: logistic | mlp"),
    ("clf_hidden", "64", "guidance classifier width"),
    ("clf_steps", "1000", "guidance classifier training steps"),
    ("clf_lr", "0.001", "guidance classifier learning rate"),
    ("clf_time", "true", "condition the classifier on the timestep"),
    ("clf_embed_dim", "16", "classifier timestep features"),
    ("aug_step", "100", "synthetic records added per augmentation point"),
    ("aug_pool", "1000", "synthetic records generated for augmentation"),
    ("ckpt_every", "0", "intermediate checkpoint interval in training steps (0 = off)"),
];

/// Key table for `--help`.
pub fn describe_keys() -> String {
    let mut s = String::from("Config keys (key=value, defaults shown):\n");
    for (k, d, desc) in KEYS {
        s.push_str(&format!("  {:<22} {desc}\n", format!("{k}={d}")));
    }
    s
}

fn bad(key: &str, value: &str) -> Error {
    Error::config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "T" => self.steps_t = num(key, v)?,
            "beta_start" => self.beta_start = num(key, v)?,
            "beta_end" => self.beta_end = num(key, v)?,
            "arch" => {
                self.arch = match v {
                    "mlp" => ArchKind::Mlp,
                    "unet1d" | "unet" => ArchKind::UNet1d,
                    _ => return Err(bad(key, v)),
                }
            }
            "hidden" => self.hidden = num(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "channels" => {
                self.channels = v
                    .split(',')
                    .map(|c| num(key, c.trim()))
                    .collect::<Result<_>>()?
            }
            "res_blocks" => self.res_blocks = num(key, v)?,
            "kernel" => self.kernel = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "time_dim" => self.time_dim = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "steps" => self.train_steps = num(key, v)?,
            "tol" => self.tol = num(key, v)?,
            "weighted" => self.weighted = boolean(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "ddpm" => SampleMode::Ddpm,
                    "ddim" => SampleMode::Ddim,
                    _ => return Err(bad(key, v)),
                }
            }
            "sigma" => {
                self.sigma = match v {
                    "posterior" => SigmaMode::Posterior,
                    "zero" => SigmaMode::Zero,
                    _ => return Err(bad(key, v)),
                }
            }
            "k" => self.k = num(key, v)?,
            "samples" => self.samples = num(key, v)?,
            "ddim_literal" => self.ddim_literal = boolean(key, v)?,
            "guidance_scale" => self.guidance_scale = num(key, v)?,
            "threshold" => self.threshold = num(key, v)?,
            "kind" => self.kind = v.parse().map_err(|_| bad(key, v))?,
            "labeled" => self.labeled = boolean(key, v)?,
            "header" => self.header = boolean(key, v)?,
            "clf_kind" => {
                self.clf_kind = match v {
                    "logistic" => ClassifierKind::Logistic,
                    "mlp" => ClassifierKind::Mlp { hidden: self.clf_hidden },
                    _ => return Err(bad(key, v)),
                }
            }
            "clf_hidden" => {
                self.clf_hidden = num(key, v)?;
                if let ClassifierKind::Mlp { hidden } = &mut self.clf_kind {
                    *hidden = self.clf_hidden;
                }
            }
            "clf_steps" => self.clf_steps = num(key, v)?,
            "clf_lr" => self.clf_lr = num(key, v)?,
            "clf_time" => self.clf_time = boolean(key, v)?,
            "clf_embed_dim" => self.clf_embed_dim = num(key, v)?,
            "aug_step" => self.aug_step = num(key, v)?,
            "aug_pool" => self.aug_pool = num(key, v)?,
            "ckpt_every" => self.ckpt_every = num(key, v)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.train_config().validate()?;
        self.denoiser_config(1).validate()?;
        if self.samples == 0 {
            return Err(Error::config("samples must be at least 1"));
        }
        if !self.guidance_scale.is_finite() || !self.threshold.is_finite() {
            return Err(Error::config("guidance_scale and threshold must be finite"));
        }
        if self.clf_hidden == 0 || self.clf_steps == 0 {
            return Err(Error::config("clf_hidden and clf_steps must be positive"));
        }
        if !(self.clf_lr > 0.0 && self.clf_lr.is_finite()) {
            return Err(Error::config("clf_lr must be positive"));
        }
        if self.aug_step == 0 {
            return Err(Error::config("aug_step must be at least 1"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps_t, self.beta_start, self.beta_end)
    }

    pub fn denoiser_config(&self, feature_dim: usize) -> DenoiserConfig {
        let arch = match self.arch {
            ArchKind::Mlp => Arch::Mlp {
                hidden: self.hidden,
                layers: self.layers,
            },
            ArchKind::UNet1d => Arch::UNet1d {
                channels: self.channels.clone(),
                res_blocks: self.res_blocks,
                kernel: self.kernel,
            },
        };
        DenoiserConfig {
            arch,
            feature_dim,
            embed_dim: self.embed_dim,
            time_dim: self.time_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            max_steps: self.train_steps,
            tol: self.tol,
            seed: self.seed,
            weighted: self.weighted,
            ..TrainConfig::default()
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            kind: self.clf_kind,
            time_conditioned: self.clf_time,
            embed_dim: self.clf_embed_dim,
            lr: self.clf_lr,
            steps: self.clf_steps,
            batch_size: self.batch,
            seed: self.seed,
        }
    }

    pub fn sample_config(&self, steps_used: Option<usize>) -> SampleConfig {
        let mut c = SampleConfig::new(self.mode, steps_used.unwrap_or(self.steps_t), self.seed);
        c.sigma = self.sigma;
        c.ddim_literal = self.ddim_literal;
        c
    }
}
