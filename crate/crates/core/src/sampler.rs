//! Reverse-process generation.
//!
//! Every sampler walks a list of `(t, s)` step pairs from `T` down to 0.
//! With the full step count `s = t - 1`; fewer steps use a uniform stride.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::EpsModel;
use crate::error::{Error, Result};
use crate::schedule::{mu_from_eps, x0_from_eps, NoiseSchedule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// `sigma_t^2 = posterior variance`.
    Posterior,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub mode: SampleMode,
    pub sigma: SigmaMode,
    /// Number of reverse steps actually taken (`<= T`).
    pub steps: usize,
    pub seed: u64,
    pub record_trajectory: bool,
    /// Use the continuous-time update with `alpha_bar` coefficients taken
    /// literally instead of the standard DDIM form.
    pub ddim_literal: bool,
}

impl SampleConfig {
    pub fn new(mode: SampleMode, steps: usize, seed: u64) -> Self {
        SampleConfig {
            mode,
            sigma: SigmaMode::Posterior,
            steps,
            seed,
            record_trajectory: false,
            ddim_literal: false,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > sched.steps() {
            return Err(Error::config(format!(
                "sampling steps must lie in 1..={}, got {}",
                sched.steps(),
                self.steps
            )));
        }
        Ok(())
    }
}

/// Visited states `(t, x_t)` with per-chain step residuals
/// `||x_s - x_t||`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<(usize, Tensor)>,
    /// `residuals[i][c]`: residual of chain `c` on step `i`.
    pub residuals: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn mean_residuals(&self) -> Vec<f64> {
        self.residuals
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
            .collect()
    }

    /// `step,residual` with the residual averaged over chains.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,residual\n");
        for (i, r) in self.mean_residuals().iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, r));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Tensor,
    pub trajectory: Option<Trajectory>,
}

/// Per-row Euclidean distance between two equally shaped matrices.
pub fn row_distances(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (n, _) = a.dims2()?;
    a.same_shape(b)?;
    Ok((0..n)
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

pub(crate) fn predict<M: EpsModel + ?Sized>(model: &M, x: &Tensor, t: usize) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    if d != model.feature_dim() {
        return Err(Error::dim(format!(
            "model expects {} features, got {d}",
            model.feature_dim()
        )));
    }
    let eps = model.predict_eps(x, &vec![t; n])?;
    x.same_shape(&eps)?;
    Ok(eps)
}

/// Ancestral update from `t` to `s < t` given a noise estimate.
pub fn ddpm_update(
    sched: &NoiseSchedule,
    xt: &Tensor,
    t: usize,
    s: usize,
    eps_hat: &Tensor,
    z: &Tensor,
    sigma: SigmaMode,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if s >= t {
        return Err(Error::contract(format!("ddpm step needs s < t, got s={s}, t={t}")));
    }
    let (mean, var) = if s + 1 == t {
        (mu_from_eps(sched, xt, t, eps_hat)?, sched.posterior_var(t))
    } else {
        let ab_t = sched.alpha_bar(t);
        let ab_s = sched.alpha_bar(s);
        let alpha = ab_t / ab_s;
        let beta = 1.0 - alpha;
        let c = beta / (1.0 - ab_t).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let mean = xt.zip_with(eps_hat, |x, e| inv * (x - c * e))?;
        (mean, (1.0 - ab_s) / (1.0 - ab_t) * beta)
    };
    match sigma {
        SigmaMode::Zero => Ok(mean),
        SigmaMode::Posterior => {
            let sd = var.sqrt();
            mean.zip_with(z, |m, zv| m + sd * zv)
        }
    }
}

/// One ancestral step `x_t -> x_{t-1}`; `z` is ignored under [`SigmaMode::Zero`]
/// and has no effect at `t = 1`, where the posterior variance is zero.
pub fn ddpm_step<M: EpsModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    xt: &Tensor,
    t: usize,
    z: &Tensor,
    sigma: SigmaMode,
) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::TimestepRange { t, max: sched.steps() });
    }
    let eps = predict(model, xt, t)?;
    ddpm_update(sched, xt, t, t - 1, &eps, z, sigma)
}

fn lambda(sched: &NoiseSchedule, u: usize) -> f64 {
    let ab = sched.alpha_bar(u);
    (1.0 - ab).sqrt() / ab.sqrt()
}

/// Deterministic update from `t` to `s <= t` given a noise estimate.
///
/// Standard form: `x_s = sqrt(ab_s) x0_hat + sqrt(1 - ab_s) eps_hat`.
/// Literal form: `x_s = (l_s / l_t)(x_t - ab_t eps_hat) + ab_s eps_hat` with
/// `l_u = sqrt(1 - ab_u) / sqrt(ab_u)`.
pub fn ddim_update(
    sched: &NoiseSchedule,
    xt: &Tensor,
    t: usize,
    s: usize,
    eps_hat: &Tensor,
    literal: bool,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if s > t {
        return Err(Error::contract(format!("ddim step needs s <= t, got s={s}, t={t}")));
    }
    if s == t {
        return Ok(xt.clone());
    }
    if literal {
        let ratio = lambda(sched, s) / lambda(sched, t);
        let (ab_t, ab_s) = (sched.alpha_bar(t), sched.alpha_bar(s));
        return xt.zip_with(eps_hat, |x, e| ratio * (x - ab_t * e) + ab_s * e);
    }
    let x0 = x0_from_eps(sched, xt, t, eps_hat)?;
    let ab_s = sched.alpha_bar(s);
    let (a, b) = (ab_s.sqrt(), (1.0 - ab_s).sqrt());
    x0.zip_with(eps_hat, |x, e| a * x + b * e)
}

pub fn ddim_step<M: EpsModel + ?Sized>(model: &M, sched: &NoiseSchedule, xt: &Tensor, t: usize, s: usize) -> Result<Tensor> {
    if s == t {
        sched.check_t(t)?;
        return Ok(xt.clone());
    }
    let eps = predict(model, xt, t)?;
    ddim_update(sched, xt, t, s, &eps, false)
}

pub(crate) fn check_finite(x: &Tensor, t: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step: t,
            detail: "sampler state".to_string(),
        })
    }
}

/// Draw `x_T ~ N(0, I)` for `n` chains and run the configured reverse process.
pub fn sample<M: EpsModel + ?Sized>(model: &M, sched: &NoiseSchedule, cfg: &SampleConfig, n: usize) -> Result<SampleOutput> {
    if n == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xt = Tensor::standard_normal(vec![n, model.feature_dim()], &mut rng);
    run_reverse(model, sched, cfg, xt, &mut rng)
}

/// Reverse process from a given `x_T`. Noise for ancestral steps is drawn
/// from `rng` in step order.
pub fn run_reverse<M: EpsModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    x_start: Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutput> {
    reverse_with(sched, cfg, x_start, rng, |x, t| predict(model, x, t))
}

/// Reverse loop with a caller-supplied noise estimate.
pub(crate) fn reverse_with(
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    x_start: Tensor,
    rng: &mut ChaCha8Rng,
    mut eps_fn: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<SampleOutput> {
    cfg.validate(sched)?;
    let mut x = x_start;
    check_finite(&x, sched.steps())?;
    let mut traj = cfg.record_trajectory.then(Trajectory::default);
    for (t, s) in sched.strided_steps(cfg.steps)? {
        let eps = eps_fn(&x, t)?;
        x.same_shape(&eps)?;
        let next = match cfg.mode {
            SampleMode::Ddim => ddim_update(sched, &x, t, s, &eps, cfg.ddim_literal)?,
            SampleMode::Ddpm => {
                let z = match cfg.sigma {
                    SigmaMode::Posterior if s > 0 => Tensor::standard_normal(x.shape().to_vec(), rng),
                    _ => Tensor::zeros(x.shape().to_vec()),
                };
                ddpm_update(sched, &x, t, s, &eps, &z, cfg.sigma)?
            }
        };
        check_finite(&next, t)?;
        if let Some(tr) = traj.as_mut() {
            tr.residuals.push(row_distances(&next, &x)?);
            tr.states.push((t, std::mem::replace(&mut x, next)));
        } else {
            x = next;
        }
    }
    if let Some(tr) = traj.as_mut() {
        tr.states.push((0, x.clone()));
    }
    Ok(SampleOutput {
        samples: x,
        trajectory: traj,
    })
}

/// Noise `x0` to `x_T` with recorded Gaussian noise, then run the reverse
/// process with zero sampling variance from that exact `x_T`.
pub fn reconstruct<M: EpsModel + ?Sized>(model: &M, sched: &NoiseSchedule, x0: &Tensor, cfg: &SampleConfig) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = Tensor::standard_normal(x0.shape().to_vec(), &mut rng);
    let xt = sched.forward_sample(x0, sched.steps(), &eps)?;
    let zero_cfg = SampleConfig {
        sigma: SigmaMode::Zero,
        record_trajectory: false,
        ..cfg.clone()
    };
    Ok(run_reverse(model, sched, &zero_cfg, xt, &mut rng)?.samples)
}
