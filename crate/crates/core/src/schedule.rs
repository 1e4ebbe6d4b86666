//! Linear variance schedules and the closed-form quantities of the forward
//! process: marginal noising, the Gaussian posterior of one reverse step,
//! and KL diagnostics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Precomputed per-step coefficients for `t = 1..=T`.
///
/// Arrays are stored 0-based (`beta[0]` is step 1). The accessors take the
/// 1-based step and use the convention `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta` interpolated linearly from `beta_start` to `beta_end`,
    /// both endpoints included.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        if steps > 1 && beta_start == beta_end {
            return Err(Error::config("beta must be strictly increasing; use beta_start < beta_end"));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
                .collect()
        };
        Ok(Self::from_betas_unchecked(beta_start, beta_end, beta))
    }

    fn from_betas_unchecked(beta_start: f64, beta_end: f64, beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        NoiseSchedule {
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        }
    }

    /// Schedule from an explicit beta sequence (used for hand-checked cases).
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::config("empty beta sequence"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::config("every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("beta must be strictly increasing"));
        }
        let (s, e) = (beta[0], *beta.last().unwrap());
        Ok(Self::from_betas_unchecked(s, e, beta))
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepRange { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
    pub fn forward_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_with(eps, |x, e| a * x + b * e)
    }

    /// Like [`forward_sample`](Self::forward_sample) with a separate step
    /// per row of a `[batch×dim]` matrix.
    pub fn forward_sample_rows(&self, x0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
        let (n, d) = x0.dims2()?;
        x0.same_shape(eps)?;
        if ts.len() != n {
            return Err(Error::dim(format!("{} timesteps for {n} rows", ts.len())));
        }
        let mut out = Tensor::zeros(vec![n, d]);
        for (i, &t) in ts.iter().enumerate() {
            self.check_t(t)?;
            let ab = self.alpha_bar(t);
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            for ((o, &x), &e) in out.row_mut(i).iter_mut().zip(x0.row(i)).zip(eps.row(i)) {
                *o = a * x + b * e;
            }
        }
        Ok(out)
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_coefs(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ct))
    }

    /// Mean and variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_params(&self, x0: &Tensor, xt: &Tensor, t: usize) -> Result<(Tensor, f64)> {
        let (c0, ct) = self.posterior_coefs(t)?;
        let mean = x0.zip_with(xt, |a, b| c0 * a + ct * b)?;
        Ok((mean, self.posterior_var(t)))
    }

    /// Draw `eps ~ N(0, I)` and return `(x_t, eps)`.
    pub fn training_pair<R: Rng + ?Sized>(&self, x0: &Tensor, t: usize, rng: &mut R) -> Result<(Tensor, Tensor)> {
        self.check_t(t)?;
        let eps = Tensor::standard_normal(x0.shape().to_vec(), rng);
        let xt = self.forward_sample(x0, t, &eps)?;
        Ok((xt, eps))
    }

    /// Sub-schedule over the descending step list `taus` used when sampling
    /// with fewer steps than the model was trained on. Returns the
    /// `(t, s)` pairs visited from `T_use` steps down to 0.
    pub fn strided_steps(&self, steps_used: usize) -> Result<Vec<(usize, usize)>> {
        let total = self.steps();
        if steps_used == 0 || steps_used > total {
            return Err(Error::config(format!(
                "sampling steps must lie in 1..={total}, got {steps_used}"
            )));
        }
        // Evenly spaced, always starting at T.
        let mut taus: Vec<usize> = (0..steps_used)
            .map(|i| total - (i * total) / steps_used)
            .collect();
        taus.dedup();
        let mut pairs = Vec::with_capacity(taus.len());
        for (i, &t) in taus.iter().enumerate() {
            let s = taus.get(i + 1).copied().unwrap_or(0);
            pairs.push((t, s));
        }
        Ok(pairs)
    }
}

/// `KL(N(m1, v1 I) || N(m2, v2 I))` summed over coordinates.
pub fn gaussian_kl(m1: &[f64], v1: f64, m2: &[f64], v2: f64) -> f64 {
    let d = m1.len() as f64;
    let sq: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * (d * (v1 / v2 - 1.0 + (v2 / v1).ln()) + sq / v2)
}

/// Per-step KL terms `L_{t-1} = KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t))`
/// for `t = 2..=T`, using the posterior variance for the model step and
/// one fixed noise draw per step. Diagnostic only.
pub fn vlb_terms<F, R>(sched: &NoiseSchedule, mut eps_model: F, x0: &Tensor, rng: &mut R) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(sched.steps().saturating_sub(1));
    for t in 2..=sched.steps() {
        let (xt, _) = sched.training_pair(x0, t, rng)?;
        let (mean_q, var_q) = sched.posterior_params(x0, &xt, t)?;
        let eps_hat = eps_model(&xt, t)?;
        let mean_p = mu_from_eps(sched, &xt, t, &eps_hat)?;
        out.push(gaussian_kl(mean_q.data(), var_q, mean_p.data(), var_q).max(0.0));
    }
    Ok(out)
}

/// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)`.
pub fn mu_from_eps(sched: &NoiseSchedule, xt: &Tensor, t: usize, eps_hat: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    let inv = 1.0 / sched.alpha(t).sqrt();
    let c = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    xt.zip_with(eps_hat, |x, e| inv * (x - c * e))
}

/// `(x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn x0_from_eps(sched: &NoiseSchedule, xt: &Tensor, t: usize, eps_hat: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.zip_with(eps_hat, |x, e| (x - b * e) / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_alpha_bar(beta: &[f64], t: usize) -> f64 {
        let mut p = 1.0;
        for b in &beta[..t] {
            p *= 1.0 - b;
        }
        p
    }

    #[test]
    fn default_schedule_endpoints() {
        let s = NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(200) - 1e-2).abs() < 1e-18);
        let brute = brute_alpha_bar(s.betas(), 200);
        assert!((s.alpha_bar(200) - brute).abs() <= 1e-14);
        assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.02, 0.02).unwrap();
        assert_eq!(s.betas(), &[0.02]);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 1e-4, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 1e-2, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn forward_sample_zero_noise() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
        let x0 = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let zero = Tensor::zeros(vec![3]);
        let xt = s.forward_sample(&x0, 30, &zero).unwrap();
        let c = s.alpha_bar(30).sqrt();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert_eq!(*a, c * b);
            assert!((a / c - b).abs() <= 1e-12);
        }
        assert!(matches!(
            s.forward_sample(&x0, 51, &zero),
            Err(Error::TimestepRange { t: 51, max: 50 })
        ));
        assert!(s.forward_sample(&x0, 0, &zero).is_err());
    }

    #[test]
    fn forward_sample_variance_monte_carlo() {
        let s = NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 120;
        let n = 100_000;
        let x0 = Tensor::zeros(vec![n]);
        let eps = Tensor::standard_normal(vec![n], &mut rng);
        let xt = s.forward_sample(&x0, t, &eps).unwrap();
        let mean = xt.sum() / n as f64;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let want = 1.0 - s.alpha_bar(t);
        assert!((var - want).abs() / want < 0.02, "var {var} vs {want}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    // The shipped 200-step schedule keeps alpha_bar_T near 0.36, so x_T still
    // carries signal; the Monte-Carlo correlation must match its closed form.
    // A longer schedule is needed to actually wash the signal out.
    #[test]
    fn terminal_correlation_with_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let x0 = Tensor::standard_normal(vec![n], &mut rng);
        let eps = Tensor::standard_normal(vec![n], &mut rng);

        let s = NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap();
        let xt = s.forward_sample(&x0, 200, &eps).unwrap();
        let rho = correlation(x0.data(), xt.data());
        let want = s.alpha_bar(200).sqrt();
        assert!((rho - want).abs() < 0.02, "rho {rho} vs {want}");

        let long = NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap();
        let xt = long.forward_sample(&x0, 1000, &eps).unwrap();
        assert!(correlation(x0.data(), xt.data()).abs() < 0.1);
    }

    #[test]
    fn posterior_first_step() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let (c0, _) = s.posterior_coefs(1).unwrap();
        assert!((c0 - s.beta(1) / (1.0 - s.alpha_bar(1))).abs() < 1e-15);
        let x = Tensor::vector(vec![0.3]);
        let (_, var) = s.posterior_params(&x, &x, 1).unwrap();
        assert_eq!(var, 0.0);
        // With alpha_bar_0 = 1 the mean is exactly x0.
        assert!((c0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_constant_inputs() {
        let s = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
        let c = 1.7;
        let x = Tensor::full(vec![4], c);
        for t in [2, 15, 30] {
            let (mean, _) = s.posterior_params(&x, &x, t).unwrap();
            let ab = s.alpha_bar(t);
            let abp = s.alpha_bar(t - 1);
            let direct = abp.sqrt() * s.beta(t) / (1.0 - ab) + s.alpha(t).sqrt() * (1.0 - abp) / (1.0 - ab);
            for m in mean.data() {
                assert!((m - c * direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_two_step_by_hand() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        // alpha_bar_1 = 0.9, alpha_bar_2 = 0.72
        let x0 = Tensor::vector(vec![1.0]);
        let xt = Tensor::vector(vec![2.0]);
        let (mean, var) = s.posterior_params(&x0, &xt, 2).unwrap();
        let c0 = 0.9f64.sqrt() * 0.2 / 0.28;
        let ct = 0.8f64.sqrt() * 0.1 / 0.28;
        assert!((mean.item() - (c0 + 2.0 * ct)).abs() < 1e-14);
        assert!((var - 0.1 / 0.28 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn training_pair_identity_and_determinism() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let x0 = Tensor::vector(vec![0.2, -1.0, 3.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let (xt, eps) = s.training_pair(&x0, 40, &mut r1).unwrap();
        let (xt2, eps2) = s.training_pair(&x0, 40, &mut r2).unwrap();
        assert_eq!(xt, xt2);
        assert_eq!(eps, eps2);
        let ab = s.alpha_bar(40);
        for i in 0..3 {
            let lhs = xt.data()[i] - (1.0 - ab).sqrt() * eps.data()[i];
            assert!((lhs - ab.sqrt() * x0.data()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn training_pair_marginal_moments() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = Tensor::full(vec![50_000], 2.0);
        let (xt, _) = s.training_pair(&x0, 80, &mut rng).unwrap();
        let n = xt.len() as f64;
        let mean = xt.sum() / n;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let ab = s.alpha_bar(80);
        assert!((mean - 2.0 * ab.sqrt()).abs() / (2.0 * ab.sqrt()) < 0.02);
        assert!((var - (1.0 - ab)).abs() / (1.0 - ab) < 0.02);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        assert_eq!(gaussian_kl(&[1.0, 2.0], 0.3, &[1.0, 2.0], 0.3), 0.0);
    }

    #[test]
    fn kl_matches_closed_form_scalar() {
        // Independent 1-D formula: log(s2/s1) + (s1^2 + (m1-m2)^2)/(2 s2^2) - 1/2
        let (m1, v1, m2, v2) = (0.3, 0.5, -0.4, 0.8);
        let (s1, s2) = (f64::sqrt(v1), f64::sqrt(v2));
        let want = (s2 / s1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / (2.0 * v2) - 0.5;
        assert!((gaussian_kl(&[m1], v1, &[m2], v2) - want).abs() < 1e-14);
    }

    #[test]
    fn vlb_terms_vanish_for_exact_model() {
        // Point mass at x0: the true noise is recoverable from x_t, so the
        // model mean equals the posterior mean.
        let s = NoiseSchedule::linear(20, 1e-3, 0.05).unwrap();
        let x0 = Tensor::vector(vec![0.5, -1.0]);
        let x0c = x0.clone();
        let sc = s.clone();
        let exact = move |xt: &Tensor, t: usize| {
            let ab = sc.alpha_bar(t);
            xt.zip_with(&x0c, |x, c| (x - ab.sqrt() * c) / (1.0 - ab).sqrt())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let terms = vlb_terms(&s, exact, &x0, &mut rng).unwrap();
        assert_eq!(terms.len(), 19);
        assert!(terms.iter().all(|&v| (0.0..=1e-8).contains(&v)));
    }

    #[test]
    fn mu_and_x0_from_eps() {
        let s = NoiseSchedule::linear(1, 0.05, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = Tensor::standard_normal(vec![6], &mut rng);
        let eps = Tensor::standard_normal(vec![6], &mut rng);
        let x1 = s.forward_sample(&x0, 1, &eps).unwrap();
        let mu = mu_from_eps(&s, &x1, 1, &eps).unwrap();
        assert!(mu.sub(&x0).unwrap().norm() <= 1e-10);
        let back = x0_from_eps(&s, &x1, 1, &eps).unwrap();
        assert!(back.sub(&x0).unwrap().norm() <= 1e-12);

        let zero = Tensor::zeros(vec![6]);
        let mu0 = mu_from_eps(&s, &x1, 1, &zero).unwrap();
        let hat0 = x0_from_eps(&s, &x1, 1, &zero).unwrap();
        for i in 0..6 {
            assert!((mu0.data()[i] - x1.data()[i] / s.alpha(1).sqrt()).abs() < 1e-15);
            assert!((hat0.data()[i] - x1.data()[i] / s.alpha_bar(1).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn eps_conversions_match_scalar_formula() {
        let s = NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xt = Tensor::standard_normal(vec![10], &mut rng);
        let e = Tensor::standard_normal(vec![10], &mut rng);
        for t in [1, 57, 200] {
            let mu = mu_from_eps(&s, &xt, t, &e).unwrap();
            let x0 = x0_from_eps(&s, &xt, t, &e).unwrap();
            for i in 0..10 {
                let (x, ei) = (xt.data()[i], e.data()[i]);
                let b = s.beta(t);
                let ab = s.alpha_bar(t);
                let want_mu = (x - b / (1.0 - ab).sqrt() * ei) / (1.0 - b).sqrt();
                let want_x0 = (x - (1.0 - ab).sqrt() * ei) / ab.sqrt();
                assert!((mu.data()[i] - want_mu).abs() < 1e-12);
                assert!((x0.data()[i] - want_x0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strided_steps_cover_range() {
        let s = NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap();
        let full = s.strided_steps(200).unwrap();
        assert_eq!(full.len(), 200);
        assert_eq!(full[0], (200, 199));
        assert_eq!(*full.last().unwrap(), (1, 0));
        let half = s.strided_steps(100).unwrap();
        assert_eq!(half.len(), 100);
        assert_eq!(half[0], (200, 198));
        assert_eq!(*half.last().unwrap(), (2, 0));
        assert!(s.strided_steps(0).is_err());
        assert!(s.strided_steps(201).is_err());
    }

    proptest! {
        #[test]
        fn schedule_invariants(
            steps in 2usize..400,
            start in 1e-5f64..1e-2,
            spread in 1e-4f64..0.3,
        ) {
            let end = (start + spread).min(0.5);
            let s = NoiseSchedule::linear(steps, start, end).unwrap();
            for t in 1..steps {
                prop_assert!(s.beta(t) < s.beta(t + 1));
                prop_assert!(s.alpha_bar(t) > s.alpha_bar(t + 1));
            }
            for t in 1..=steps {
                let ab = s.alpha_bar(t);
                prop_assert!(ab > 0.0 && ab < 1.0);
                prop_assert!((ab - brute_alpha_bar(s.betas(), t)).abs() <= 1e-14);
                prop_assert!(s.posterior_var(t) <= s.beta(t));
            }
            prop_assert_eq!(s.posterior_var(1), 0.0);
        }
    }
}
