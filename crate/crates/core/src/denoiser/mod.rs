//! Time-conditioned noise predictors `eps_theta(x_t, t)`.
//!
//! Two architectures share one parameter layout convention and one time
//! pathway: sinusoidal features of `t` go through a two-layer MLP, and the
//! result is injected into every hidden layer (MLP) or residual block
//! (U-Net).

mod embedding;
mod mlp;
mod unet;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use embedding::TimestepEmbedding;
pub use unet::RESIDUAL_SCALE;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// Anything that predicts the noise in a `[batch×dim]` input given one
/// timestep per row.
pub trait EpsModel {
    fn feature_dim(&self) -> usize;
    fn predict_eps(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor>;
}

/// Closure adapter for [`EpsModel`].
pub struct EpsFn<F> {
    dim: usize,
    f: F,
}

impl<F> EpsFn<F>
where
    F: Fn(&Tensor, &[usize]) -> Result<Tensor>,
{
    pub fn new(dim: usize, f: F) -> Self {
        EpsFn { dim, f }
    }
}

impl<F> EpsModel for EpsFn<F>
where
    F: Fn(&Tensor, &[usize]) -> Result<Tensor>,
{
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn predict_eps(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        (self.f)(x, ts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    Mlp { hidden: usize, layers: usize },
    UNet1d { channels: Vec<usize>, res_blocks: usize, kernel: usize },
}

impl Arch {
    /// Three hidden layers of width 256.
    pub fn default_mlp() -> Self {
        Arch::Mlp { hidden: 256, layers: 3 }
    }

    /// Two resolution levels (32, 64), two residual blocks per level, kernel 3.
    pub fn default_unet() -> Self {
        Arch::UNet1d {
            channels: vec![32, 64],
            res_blocks: 2,
            kernel: 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Mlp { .. } => "mlp",
            Arch::UNet1d { .. } => "unet1d",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub arch: Arch,
    pub feature_dim: usize,
    /// Width of the sinusoidal features.
    pub embed_dim: usize,
    /// Width of the time MLP output.
    pub time_dim: usize,
}

impl DenoiserConfig {
    pub fn mlp(feature_dim: usize) -> Self {
        DenoiserConfig {
            arch: Arch::default_mlp(),
            feature_dim,
            embed_dim: 32,
            time_dim: 64,
        }
    }

    pub fn unet(feature_dim: usize) -> Self {
        DenoiserConfig {
            arch: Arch::default_unet(),
            feature_dim,
            embed_dim: 32,
            time_dim: 64,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if self.time_dim == 0 {
            return Err(Error::config("time_dim must be positive"));
        }
        TimestepEmbedding::new(self.embed_dim)?;
        match &self.arch {
            Arch::Mlp { hidden, layers } => {
                if *hidden == 0 || *layers == 0 {
                    return Err(Error::config("mlp needs positive width and depth"));
                }
            }
            Arch::UNet1d { channels, res_blocks, kernel } => {
                if channels.is_empty() || channels.contains(&0) || *res_blocks == 0 {
                    return Err(Error::config("unet needs non-empty positive channels and >= 1 block"));
                }
                if kernel % 2 == 0 {
                    return Err(Error::config(format!("unet kernel must be odd, got {kernel}")));
                }
            }
        }
        Ok(())
    }

    /// Flat numeric descriptor stored in checkpoints.
    pub fn to_descriptor(&self) -> Vec<f64> {
        let mut d = vec![self.feature_dim as f64, self.embed_dim as f64, self.time_dim as f64];
        match &self.arch {
            Arch::Mlp { hidden, layers } => {
                d.insert(0, 0.0);
                d.extend([*hidden as f64, *layers as f64]);
            }
            Arch::UNet1d { channels, res_blocks, kernel } => {
                d.insert(0, 1.0);
                d.extend([*res_blocks as f64, *kernel as f64, channels.len() as f64]);
                d.extend(channels.iter().map(|&c| c as f64));
            }
        }
        d
    }

    pub fn from_descriptor(d: &[f64]) -> Result<Self> {
        let bad = || Error::config(format!("malformed architecture descriptor {d:?}"));
        let as_usize = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e12 {
                Ok(v as usize)
            } else {
                Err(bad())
            }
        };
        if d.len() < 6 {
            return Err(bad());
        }
        let feature_dim = as_usize(d[1])?;
        let embed_dim = as_usize(d[2])?;
        let time_dim = as_usize(d[3])?;
        let arch = match d[0] as i64 {
            0 if d.len() == 6 => Arch::Mlp {
                hidden: as_usize(d[4])?,
                layers: as_usize(d[5])?,
            },
            1 if d.len() >= 7 => {
                let n = as_usize(d[6])?;
                if d.len() != 7 + n {
                    return Err(bad());
                }
                Arch::UNet1d {
                    res_blocks: as_usize(d[4])?,
                    kernel: as_usize(d[5])?,
                    channels: d[7..].iter().map(|&v| as_usize(v)).collect::<Result<_>>()?,
                }
            }
            _ => return Err(bad()),
        };
        let cfg = DenoiserConfig {
            arch,
            feature_dim,
            embed_dim,
            time_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    params: ParamSet,
    embed: TimestepEmbedding,
}

impl DenoiserModel {
    /// Fresh model with fan-in scaled uniform weights, zero biases and a
    /// zero output layer.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_time_mlp(&mut params, &config, &mut rng)?;
        match &config.arch {
            Arch::Mlp { hidden, layers } => mlp::init(&mut params, &config, *hidden, *layers, &mut rng)?,
            Arch::UNet1d { channels, res_blocks, kernel } => {
                unet::init(&mut params, &config, channels, *res_blocks, *kernel, &mut rng)?
            }
        }
        let embed = TimestepEmbedding::new(config.embed_dim)?;
        Ok(DenoiserModel { config, params, embed })
    }

    /// Rebuild from stored parameters; every expected tensor must be present
    /// with the expected shape.
    pub fn from_params(config: DenoiserConfig, params: ParamSet) -> Result<Self> {
        let template = DenoiserModel::new(config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in template.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(DenoiserModel {
            config: template.config,
            params,
            embed: template.embed,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embedding(&self) -> TimestepEmbedding {
        self.embed
    }

    /// Record the forward pass on `tape` using parameter handles `p`.
    pub fn forward_on(&self, tape: &mut Tape, p: &BTreeMap<String, Var>, x: Var, ts: &[usize]) -> Result<Var> {
        let (batch, dim) = tape.value(x).dims2()?;
        if dim != self.config.feature_dim {
            return Err(Error::dim(format!(
                "model expects {} features, input has {dim}",
                self.config.feature_dim
            )));
        }
        if ts.len() != batch {
            return Err(Error::dim(format!("{} timesteps for batch of {batch}", ts.len())));
        }
        if ts.contains(&0) {
            return Err(Error::TimestepRange { t: 0, max: usize::MAX });
        }
        let emb = tape.leaf(self.embed.embed_batch(ts));
        let temb = time_mlp(tape, p, emb)?;
        match &self.config.arch {
            Arch::Mlp { layers, .. } => mlp::forward(tape, p, x, temb, *layers),
            Arch::UNet1d { channels, res_blocks, kernel } => {
                unet::forward(tape, p, x, temb, channels, *res_blocks, *kernel)
            }
        }
    }

    /// Predicted noise for `x[batch×dim]`, one timestep per row.
    pub fn forward(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.params(&self.params);
        let xv = tape.leaf(x.clone());
        let out = self.forward_on(&mut tape, &p, xv, ts)?;
        Ok(tape.value(out).clone())
    }
}

impl EpsModel for DenoiserModel {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn predict_eps(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        self.forward(x, ts)
    }
}

pub(crate) fn fan_in_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

fn init_time_mlp(params: &mut ParamSet, cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (e, h) = (cfg.embed_dim, cfg.time_dim);
    params.insert("time.w1", fan_in_uniform(vec![e, h], e, rng))?;
    params.insert("time.b1", Tensor::zeros(vec![h]))?;
    params.insert("time.w2", fan_in_uniform(vec![h, h], h, rng))?;
    params.insert("time.b2", Tensor::zeros(vec![h]))?;
    Ok(())
}

/// `silu(W2 silu(W1 e + b1) + b2)`; callers project it per layer.
fn time_mlp(tape: &mut Tape, p: &BTreeMap<String, Var>, emb: Var) -> Result<Var> {
    let h = tape.linear(emb, p["time.w1"], p["time.b1"])?;
    let h = tape.silu(h);
    let h = tape.linear(h, p["time.w2"], p["time.b2"])?;
    Ok(tape.silu(h))
}
