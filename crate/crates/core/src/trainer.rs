//! Noise-prediction training with Adam.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::denoiser::{DenoiserModel, EpsModel};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        for (name, t) in params.iter() {
            match grads.get(name) {
                None => return Err(Error::contract(format!("no gradient for parameter {name:?}"))),
                Some(g) if g.shape() != t.shape() => {
                    return Err(Error::dim(format!(
                        "gradient for {name:?} has shape {:?}, parameter {:?}",
                        g.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.get_mut(name).expect("moment for parameter").data_mut();
            let v = self.v.get_mut(name).expect("moment for parameter").data_mut();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once a minibatch loss is at or below this value; 0 disables.
    pub tol: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Weight each sample by `beta_t / (2 alpha_t (1 - alpha_bar_t))`
    /// instead of the unweighted noise regression.
    pub weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_steps: 2000,
            tol: 0.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            weighted: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::config("tol must be >= 0"));
        }
        Ok(())
    }
}

/// Loss history indexed by step (1-based).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub history: Vec<(usize, f64)>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|&(_, l)| l)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.history {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Mean over the batch of `||eps - eps_theta(x_t, t)||^2`.
pub fn loss_batch<M: EpsModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
) -> Result<f64> {
    let (n, _) = x0.dims2()?;
    let xt = sched.forward_sample_rows(x0, ts, eps)?;
    let pred = model.predict_eps(&xt, ts)?;
    let diff = eps.sub(&pred)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / n as f64)
}

fn sample_weight(sched: &NoiseSchedule, t: usize) -> f64 {
    sched.beta(t) / (2.0 * sched.alpha(t) * (1.0 - sched.alpha_bar(t)))
}

/// Loss value and parameter gradients for one minibatch.
pub fn loss_and_grads(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    weighted: bool,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let (n, d) = x0.dims2()?;
    let xt = sched.forward_sample_rows(x0, ts, eps)?;
    let mut tape = Tape::new();
    let p = tape.params(model.params());
    let xv = tape.leaf(xt);
    let pred = model.forward_on(&mut tape, &p, xv, ts)?;
    let target = tape.leaf(eps.clone());
    let diff = tape.sub(target, pred)?;
    let diff = if weighted {
        let mut w = Tensor::zeros(vec![n, d]);
        for (i, &t) in ts.iter().enumerate() {
            let wt = sample_weight(sched, t).sqrt();
            w.row_mut(i).iter_mut().for_each(|v| *v = wt);
        }
        let wv = tape.leaf(w);
        tape.mul(diff, wv)?
    } else {
        diff
    };
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq);
    let loss = tape.scale(s, 1.0 / n as f64);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.params();
    Ok((value, grads))
}

/// `n` timesteps drawn uniformly from `1..=steps`.
pub fn sample_timesteps<R: Rng + ?Sized>(rng: &mut R, steps: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=steps)).collect()
}

/// Seed of the random stream used for minibatch `step`.
pub fn batch_seed(seed: u64, step: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn train(model: &mut DenoiserModel, sched: &NoiseSchedule, data: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, sched, data, cfg, |_, _, _| Ok(()))
}

/// Training loop with a per-step hook (used for periodic checkpoints).
pub fn train_with<F>(
    model: &mut DenoiserModel,
    sched: &NoiseSchedule,
    data: &Tensor,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, f64, &DenoiserModel) -> Result<()>,
{
    cfg.validate()?;
    let (rows, dim) = data.dims2()?;
    if dim != model.feature_dim() {
        return Err(Error::dim(format!(
            "dataset has {dim} features, model expects {}",
            model.feature_dim()
        )));
    }
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(model.params());
    let mut report = TrainReport::default();
    for step in 1..=cfg.max_steps {
        let bseed = batch_seed(cfg.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(bseed);
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..rows)).collect();
        let x0 = data.select_rows(&idx)?;
        let ts = sample_timesteps(&mut rng, sched.steps(), cfg.batch_size);
        let eps = Tensor::standard_normal(vec![cfg.batch_size, dim], &mut rng);
        let (loss, grads) = loss_and_grads(model, sched, &x0, &ts, &eps, cfg.weighted)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("training loss {loss} (batch seed {bseed})"),
            });
        }
        adam.step(model.params_mut(), &grads, &adam_cfg)?;
        report.history.push((step, loss));
        on_step(step, loss, model)?;
        if cfg.tol > 0.0 && loss <= cfg.tol {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}
