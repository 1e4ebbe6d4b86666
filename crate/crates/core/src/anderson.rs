//! Anderson acceleration with an incrementally updated QR factorization.
//!
//! For a fixed-point map `g`, with residuals `f_i = g(w_i) - w_i`, the
//! update is `w_{t+1} = g(w_t) - dG gamma` where `gamma` minimizes
//! `||f_t - dF gamma||`. The difference tables `dF`, `dG` grow by one column
//! per step and are cleared (restarted) instead of sliding.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::EpsModel;
use crate::error::{Error, Result};
use crate::sampler::{check_finite, ddim_update, predict, SampleConfig, SampleMode};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Columns whose orthogonalized norm falls below this fraction of the
/// first column's norm are treated as linearly dependent.
pub const DROP_TOL: f64 = 1e-10;
/// Bound on `||gamma||_1`; larger solutions trigger a restart.
pub const GAMMA_L1_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restart {
    /// Appending would exceed the table size `k`.
    Full,
    RankDeficient,
    GammaBound,
    NonFinite,
}

/// What a single [`AndersonState::update`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    /// Plain step `w_{t+1} = g(w_t)` with an empty table.
    Plain,
    /// Extrapolated step with the prototype weights used.
    Accelerated { beta: Vec<f64> },
    /// The table was cleared and a plain step taken.
    Restarted(Restart),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AndersonState {
    k: usize,
    /// Orthonormal columns of `Q`.
    q: Vec<Vec<f64>>,
    /// `r[j][i]` is `R(i, j)` for `i <= j`.
    r: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
    prev_f: Option<Vec<f64>>,
    prev_g: Option<Vec<f64>>,
    restarts: usize,
}

impl AndersonState {
    pub fn new(k: usize) -> Self {
        AndersonState {
            k,
            q: Vec::new(),
            r: Vec::new(),
            df: Vec::new(),
            dg: Vec::new(),
            prev_f: None,
            prev_g: None,
            restarts: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Current table size.
    pub fn p(&self) -> usize {
        self.q.len()
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn q_columns(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn df_columns(&self) -> &[Vec<f64>] {
        &self.df
    }

    /// Dense `p×p` upper-triangular `R`, row-major.
    pub fn r_matrix(&self) -> Vec<Vec<f64>> {
        let p = self.p();
        let mut out = vec![vec![0.0; p]; p];
        for (j, col) in self.r.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                out[i][j] = v;
            }
        }
        out
    }

    /// Empty the difference tables. The previous residual is kept so the
    /// next call can start a fresh table.
    pub fn clear(&mut self) {
        self.q.clear();
        self.r.clear();
        self.df.clear();
        self.dg.clear();
    }

    fn restart(&mut self, why: Restart) -> StepKind {
        self.clear();
        self.restarts += 1;
        StepKind::Restarted(why)
    }

    /// One modified Gram-Schmidt sweep adding `df` as the last column of
    /// `dF = QR`. A column that is numerically dependent is rejected and
    /// the table left unchanged.
    pub fn qr_append(&mut self, df: &[f64]) -> std::result::Result<(), Restart> {
        if self.p() >= self.k {
            return Err(Restart::Full);
        }
        if let Some(q0) = self.q.first() {
            if q0.len() != df.len() {
                return Err(Restart::NonFinite);
            }
        }
        let mut v = df.to_vec();
        let mut rcol = Vec::with_capacity(self.p() + 1);
        for qi in &self.q {
            let rij = dot(qi, &v);
            for (a, b) in v.iter_mut().zip(qi) {
                *a -= rij * b;
            }
            rcol.push(rij);
        }
        let nv = norm(&v);
        let tol = match self.df.first() {
            Some(first) => DROP_TOL * norm(first),
            None => 0.0,
        };
        if !nv.is_finite() || rcol.iter().any(|x| !x.is_finite()) {
            return Err(Restart::NonFinite);
        }
        if nv <= tol || nv == 0.0 {
            return Err(Restart::RankDeficient);
        }
        v.iter_mut().for_each(|a| *a /= nv);
        rcol.push(nv);
        self.q.push(v);
        self.r.push(rcol);
        self.df.push(df.to_vec());
        Ok(())
    }

    /// Least-squares coefficients for `min ||f - dF gamma||` from
    /// `R gamma = Q^T f` by back substitution.
    pub fn solve_gamma(&self, f: &[f64]) -> std::result::Result<Vec<f64>, Restart> {
        let p = self.p();
        let tol = self.df.first().map_or(0.0, |c| DROP_TOL * norm(c));
        let c: Vec<f64> = self.q.iter().map(|qi| dot(qi, f)).collect();
        let mut gamma = vec![0.0; p];
        for i in (0..p).rev() {
            let rii = self.r[i][i];
            if rii.abs() <= tol {
                return Err(Restart::RankDeficient);
            }
            let mut acc = c[i];
            for (j, g) in gamma.iter().enumerate().skip(i + 1) {
                acc -= self.r[j][i] * g;
            }
            gamma[i] = acc / rii;
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Restart::NonFinite);
        }
        Ok(gamma)
    }

    /// Given `g(w_t)` and `w_t`, return `w_{t+1}` and what kind of step was
    /// taken. With `k = 0` this is exactly `g(w_t)`.
    pub fn update(&mut self, g: &[f64], w: &[f64]) -> (Vec<f64>, StepKind) {
        let f: Vec<f64> = g.iter().zip(w).map(|(a, b)| a - b).collect();
        if self.k == 0 {
            return (g.to_vec(), StepKind::Plain);
        }
        let prev = self.prev_f.take().zip(self.prev_g.take());
        self.prev_f = Some(f.clone());
        self.prev_g = Some(g.to_vec());
        let Some((pf, pg)) = prev else {
            return (g.to_vec(), StepKind::Plain);
        };
        if pf.len() != f.len() {
            return (g.to_vec(), self.restart(Restart::NonFinite));
        }
        let df: Vec<f64> = f.iter().zip(&pf).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g.iter().zip(&pg).map(|(a, b)| a - b).collect();
        if let Err(why) = self.qr_append(&df) {
            return (g.to_vec(), self.restart(why));
        }
        self.dg.push(dg);
        let gamma = match self.solve_gamma(&f) {
            Ok(gm) => gm,
            Err(why) => return (g.to_vec(), self.restart(why)),
        };
        if gamma.iter().map(|x| x.abs()).sum::<f64>() > GAMMA_L1_BOUND {
            return (g.to_vec(), self.restart(Restart::GammaBound));
        }
        let mut next = g.to_vec();
        for (col, &gm) in self.dg.iter().zip(&gamma) {
            for (a, b) in next.iter_mut().zip(col) {
                *a -= gm * b;
            }
        }
        if next.iter().any(|x| !x.is_finite()) {
            return (g.to_vec(), self.restart(Restart::NonFinite));
        }
        (next, StepKind::Accelerated { beta: beta_from_gamma(&gamma) })
    }
}

/// `beta_0 = gamma_0`, `beta_i = gamma_i - gamma_{i-1}`, `beta_p = 1 - gamma_{p-1}`.
pub fn beta_from_gamma(gamma: &[f64]) -> Vec<f64> {
    let p = gamma.len();
    if p == 0 {
        return vec![1.0];
    }
    let mut beta = Vec::with_capacity(p + 1);
    beta.push(gamma[0]);
    for i in 1..p {
        beta.push(gamma[i] - gamma[i - 1]);
    }
    beta.push(1.0 - gamma[p - 1]);
    beta
}

/// Inverse of [`beta_from_gamma`] on weights that sum to one: partial sums
/// of all but the last weight.
pub fn gamma_from_beta(beta: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    beta[..beta.len().saturating_sub(1)]
        .iter()
        .map(|b| {
            acc += b;
            acc
        })
        .collect()
}

/// Weights minimizing `||F beta||` subject to `sum(beta) = 1` for residual
/// columns `f_0..f_p`. Dependent difference columns get `gamma_i = 0`.
pub fn aa_prototype_weights(f_cols: &[Vec<f64>]) -> Vec<f64> {
    let p = f_cols.len().saturating_sub(1);
    if p == 0 {
        return vec![1.0];
    }
    let mut st = AndersonState::new(p);
    let mut kept = Vec::new();
    for i in 0..p {
        let df: Vec<f64> = f_cols[i + 1].iter().zip(&f_cols[i]).map(|(a, b)| a - b).collect();
        if st.qr_append(&df).is_ok() {
            kept.push(i);
        }
    }
    let mut gamma = vec![0.0; p];
    if let Ok(g) = st.solve_gamma(&f_cols[p]) {
        for (&i, v) in kept.iter().zip(g) {
            gamma[i] = v;
        }
    }
    beta_from_gamma(&gamma)
}

/// Result of [`fixed_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRun {
    pub iterates: Vec<Vec<f64>>,
    /// `||g(w_i) - w_i||` for every iterate.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Accelerated iteration of a generic map until `||g(w) - w|| <= tol` or
/// `max_iter` steps.
pub fn fixed_point(mut g: impl FnMut(&[f64]) -> Vec<f64>, w0: Vec<f64>, k: usize, max_iter: usize, tol: f64) -> FixedPointRun {
    let mut st = AndersonState::new(k);
    let mut w = w0;
    let mut run = FixedPointRun {
        iterates: Vec::new(),
        residuals: Vec::new(),
        converged: false,
    };
    for _ in 0..=max_iter {
        let gw = g(&w);
        let res = gw.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        run.iterates.push(w.clone());
        run.residuals.push(res);
        if res <= tol {
            run.converged = true;
            break;
        }
        if run.iterates.len() > max_iter {
            break;
        }
        w = st.update(&gw, &w).0;
    }
    run
}

/// Per-chain diagnostics of an accelerated sampling run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AAReport {
    /// `residuals[i][c] = ||x^{(i+1)} - x^{(i)}||` for chain `c`.
    pub residuals: Vec<Vec<f64>>,
    /// Wall time since the start of the run after each iteration.
    pub elapsed_ns: Vec<u128>,
    pub restarts: Vec<usize>,
    /// `(iteration, chain)` pairs where extrapolation produced a
    /// non-finite iterate and the plain step was used instead.
    pub fallbacks: Vec<(usize, usize)>,
}

impl AAReport {
    pub fn chains(&self) -> usize {
        self.residuals.first().map_or(0, Vec::len)
    }

    pub fn chain_residuals(&self, c: usize) -> Vec<f64> {
        self.residuals.iter().map(|r| r[c]).collect()
    }

    /// First iteration (1-based) with residual below `tol`, per chain.
    pub fn iterations_to_tol(&self, tol: f64) -> Vec<Option<usize>> {
        (0..self.chains())
            .map(|c| iterations_to_tolerance(&self.chain_residuals(c), tol))
            .collect()
    }

    /// `iteration,residual,elapsed_ns` with the residual averaged over chains.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual,elapsed_ns\n");
        for (i, (r, e)) in self.residuals.iter().zip(&self.elapsed_ns).enumerate() {
            let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
            s.push_str(&format!("{},{},{}\n", i + 1, m, e));
        }
        s
    }

    /// `step,residual` without timings, so repeated runs give identical text.
    pub fn residual_csv(&self) -> String {
        let mut s = String::from("step,residual\n");
        for (i, r) in self.residuals.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, r.iter().sum::<f64>() / r.len().max(1) as f64));
        }
        s
    }
}

/// First 1-based index whose residual is below `tol`.
pub fn iterations_to_tolerance(residuals: &[f64], tol: f64) -> Option<usize> {
    residuals.iter().position(|&r| r < tol).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratedOutput {
    pub samples: Tensor,
    pub report: AAReport,
}

/// Deterministic reverse process where every update is passed through
/// Anderson acceleration, one state per chain. The starting noise matches
/// [`crate::sampler::sample`] for the same seed.
pub fn accelerated_sample<M: EpsModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    k: usize,
    n: usize,
) -> Result<AcceleratedOutput> {
    if n == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xt = Tensor::standard_normal(vec![n, model.feature_dim()], &mut rng);
    accelerate_from(sched, cfg, k, xt, |x, t| predict(model, x, t))
}

/// Accelerated loop from a given start with a caller-supplied noise
/// estimate; shared by the unconditional and guided samplers.
pub(crate) fn accelerate_from(
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    k: usize,
    start: Tensor,
    mut eps_fn: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<AcceleratedOutput> {
    cfg.validate(sched)?;
    if cfg.mode != SampleMode::Ddim {
        return Err(Error::config("accelerated sampling uses the deterministic update; set mode to ddim"));
    }
    let (n, d) = start.dims2()?;
    check_finite(&start, sched.steps())?;
    let mut states = vec![AndersonState::new(k); n];
    let mut report = AAReport::default();
    let clock = Instant::now();
    let mut x = start;
    for (iter, (t, s)) in sched.strided_steps(cfg.steps)?.into_iter().enumerate() {
        let eps = eps_fn(&x, t)?;
        x.same_shape(&eps)?;
        let g = ddim_update(sched, &x, t, s, &eps, cfg.ddim_literal)?;
        check_finite(&g, t)?;
        let mut next = Vec::with_capacity(n * d);
        let mut res = Vec::with_capacity(n);
        for (c, st) in states.iter_mut().enumerate() {
            let (row, kind) = st.update(g.row(c), x.row(c));
            if kind == StepKind::Restarted(Restart::NonFinite) {
                report.fallbacks.push((iter + 1, c));
            }
            res.push(row.iter().zip(x.row(c)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
            next.extend(row);
        }
        x = Tensor::new(vec![n, d], next)?;
        report.residuals.push(res);
        report.elapsed_ns.push(clock.elapsed().as_nanos());
    }
    report.restarts = states.iter().map(AndersonState::restarts).collect();
    Ok(AcceleratedOutput { samples: x, report })
}
