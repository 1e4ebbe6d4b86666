//! Classifier guidance: a classifier on noisy inputs whose log-likelihood
//! gradient shifts the predicted noise toward a requested class.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anderson::{accelerate_from, AcceleratedOutput};
use crate::autograd::{Tape, Var};
use crate::denoiser::{fan_in_uniform, EpsModel, TimestepEmbedding};
use crate::error::{Error, Result};
use crate::sampler::{predict, reverse_with, SampleConfig, SampleMode};
use crate::schedule::NoiseSchedule;
use crate::tensor::{ParamSet, Tensor};
use crate::trainer::{batch_seed, sample_timesteps, AdamConfig, AdamState, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    /// Softmax regression.
    Logistic,
    /// One hidden SiLU layer.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceClassifier {
    kind: ClassifierKind,
    dim: usize,
    num_classes: usize,
    /// Sinusoidal embedding of `t` concatenated to the input, if any.
    embed: Option<TimestepEmbedding>,
    params: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub time_conditioned: bool,
    pub embed_dim: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Mlp { hidden: 64 },
            time_conditioned: true,
            embed_dim: 16,
            lr: 1e-3,
            steps: 1000,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl GuidanceClassifier {
    /// Fresh classifier; logistic weights start at zero.
    pub fn new(kind: ClassifierKind, dim: usize, num_classes: usize, time_embed: Option<usize>, seed: u64) -> Result<Self> {
        if dim == 0 || num_classes < 2 {
            return Err(Error::config("classifier needs dim > 0 and at least two classes"));
        }
        let embed = time_embed.map(TimestepEmbedding::new).transpose()?;
        let input = dim + embed.map_or(0, |e| e.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match kind {
            ClassifierKind::Logistic => {
                params.insert("clf.w", Tensor::zeros(vec![input, num_classes]))?;
                params.insert("clf.b", Tensor::zeros(vec![num_classes]))?;
            }
            ClassifierKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::config("classifier hidden width must be positive"));
                }
                params.insert("clf.w1", fan_in_uniform(vec![input, hidden], input, &mut rng))?;
                params.insert("clf.b1", Tensor::zeros(vec![hidden]))?;
                params.insert("clf.w2", fan_in_uniform(vec![hidden, num_classes], hidden, &mut rng))?;
                params.insert("clf.b2", Tensor::zeros(vec![num_classes]))?;
            }
        }
        Ok(GuidanceClassifier {
            kind,
            dim,
            num_classes,
            embed,
            params,
        })
    }

    /// Time-agnostic binary classifier with `P(y=1|x) = sigmoid(w.x + b)`.
    pub fn binary_logistic(w: &[f64], b: f64) -> Result<Self> {
        let mut clf = GuidanceClassifier::new(ClassifierKind::Logistic, w.len(), 2, None, 0)?;
        let mut wm = Tensor::zeros(vec![w.len(), 2]);
        for (j, v) in w.iter().enumerate() {
            wm.row_mut(j)[1] = *v;
        }
        clf.params.assign("clf.w", wm)?;
        clf.params.assign("clf.b", Tensor::vector(vec![0.0, b]))?;
        Ok(clf)
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn time_conditioned(&self) -> bool {
        self.embed.is_some()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[kind, dim, classes, embed_dim (0 = none), hidden]`.
    pub fn descriptor(&self) -> Vec<f64> {
        let (k, h) = match self.kind {
            ClassifierKind::Logistic => (0.0, 0.0),
            ClassifierKind::Mlp { hidden } => (1.0, hidden as f64),
        };
        vec![
            k,
            self.dim as f64,
            self.num_classes as f64,
            self.embed.map_or(0.0, |e| e.dim() as f64),
            h,
        ]
    }

    pub fn from_parts(descriptor: &[f64], params: ParamSet) -> Result<Self> {
        let bad = || Error::config(format!("malformed classifier descriptor {descriptor:?}"));
        if descriptor.len() != 5 || descriptor.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(bad());
        }
        let u = |i: usize| descriptor[i] as usize;
        let kind = match u(0) {
            0 => ClassifierKind::Logistic,
            1 => ClassifierKind::Mlp { hidden: u(4) },
            _ => return Err(bad()),
        };
        let embed = (u(3) > 0).then(|| u(3));
        let mut clf = GuidanceClassifier::new(kind, u(1), u(2), embed, 0)?;
        if params.len() != clf.params.len() {
            return Err(Error::contract("classifier parameter set does not match its descriptor"));
        }
        for (name, t) in params.iter() {
            clf.params.assign(name, t.clone())?;
        }
        Ok(clf)
    }

    fn check_input(&self, x: &Tensor, ys: Option<&[usize]>) -> Result<usize> {
        let (n, d) = x.dims2()?;
        if d != self.dim {
            return Err(Error::dim(format!("classifier expects {} features, got {d}", self.dim)));
        }
        if let Some(ys) = ys {
            if ys.len() != n {
                return Err(Error::dim(format!("{} labels for {n} rows", ys.len())));
            }
            if let Some(&y) = ys.iter().find(|&&y| y >= self.num_classes) {
                return Err(Error::contract(format!("label {y} outside 0..{}", self.num_classes)));
            }
        }
        Ok(n)
    }

    /// Record the logits `[n×C]` on a tape.
    pub fn logits_on(&self, tape: &mut Tape, p: &BTreeMap<String, Var>, x: Var, ts: &[usize]) -> Result<Var> {
        let n = tape.value(x).dims2()?.0;
        if ts.len() != n {
            return Err(Error::dim(format!("{} timesteps for {n} rows", ts.len())));
        }
        let input = match &self.embed {
            Some(e) => {
                let ev = tape.leaf(e.embed_batch(ts));
                tape.concat_cols(x, ev)?
            }
            None => x,
        };
        match self.kind {
            ClassifierKind::Logistic => tape.linear(input, p["clf.w"], p["clf.b"]),
            ClassifierKind::Mlp { .. } => {
                let h = tape.linear(input, p["clf.w1"], p["clf.b1"])?;
                let h = tape.silu(h);
                tape.linear(h, p["clf.w2"], p["clf.b2"])
            }
        }
    }

    /// Per-row class log-probabilities at noise level `t`.
    pub fn log_probs(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let n = self.check_input(x, None)?;
        let mut tape = Tape::new();
        let p = tape.params(&self.params);
        let xv = tape.leaf(x.clone());
        let logits = self.logits_on(&mut tape, &p, xv, &vec![t; n])?;
        let lp = tape.log_softmax(logits)?;
        Ok(tape.value(lp).clone())
    }

    pub fn probs(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        Ok(self.log_probs(x, t)?.map(f64::exp))
    }

    pub fn predict(&self, x: &Tensor, t: usize) -> Result<Vec<usize>> {
        let lp = self.log_probs(x, t)?;
        let n = lp.shape()[0];
        Ok((0..n)
            .map(|i| {
                let r = lp.row(i);
                (0..r.len()).fold(0, |best, c| if r[c] > r[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize], t: usize) -> Result<f64> {
        let pred = self.predict(x, t)?;
        if pred.len() != labels.len() || labels.is_empty() {
            return Err(Error::dim("label count does not match rows"));
        }
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }

    /// `grad_x log p(y_i | x_i, t)` per row; closed form for the logistic
    /// kind, reverse mode otherwise.
    pub fn log_prob_grad(&self, x: &Tensor, t: usize, ys: &[usize]) -> Result<Tensor> {
        match self.kind {
            ClassifierKind::Logistic => self.logistic_grad(x, t, ys),
            ClassifierKind::Mlp { .. } => self.log_prob_grad_autodiff(x, t, ys),
        }
    }

    fn logistic_grad(&self, x: &Tensor, t: usize, ys: &[usize]) -> Result<Tensor> {
        let n = self.check_input(x, Some(ys))?;
        let probs = self.probs(x, t)?;
        let w = self.params.get("clf.w")?;
        let c = self.num_classes;
        let mut out = Tensor::zeros(vec![n, self.dim]);
        for i in 0..n {
            let p = probs.row(i);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                let wr = w.row(j);
                let mut g = wr[ys[i]];
                for k in 0..c {
                    g -= p[k] * wr[k];
                }
                *o = g;
            }
        }
        Ok(out)
    }

    /// Tape-based gradient for any kind.
    pub fn log_prob_grad_autodiff(&self, x: &Tensor, t: usize, ys: &[usize]) -> Result<Tensor> {
        let n = self.check_input(x, Some(ys))?;
        let mut tape = Tape::new();
        let p = tape.params(&self.params);
        let xv = tape.leaf(x.clone());
        let logits = self.logits_on(&mut tape, &p, xv, &vec![t; n])?;
        let lp = tape.log_softmax(logits)?;
        let picked = tape.pick(lp, ys)?;
        let total = tape.sum(picked);
        Ok(tape.backward(total)?.wrt(xv))
    }
}

/// Train on `(x_t, y)` pairs with `x_t` drawn from the forward process at
/// uniform random `t`, minimizing cross-entropy with Adam.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    sched: &NoiseSchedule,
    cfg: &ClassifierConfig,
) -> Result<(GuidanceClassifier, TrainReport)> {
    let (rows, dim) = x.dims2()?;
    if labels.len() != rows {
        return Err(Error::dim(format!("{} labels for {rows} rows", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = (0..classes).filter(|c| labels.contains(c)).count();
    if distinct < 2 {
        return Err(Error::config("classifier training needs at least two classes present"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    adam_cfg.validate()?;
    let embed = cfg.time_conditioned.then_some(cfg.embed_dim);
    let mut clf = GuidanceClassifier::new(cfg.kind, dim, classes, embed, cfg.seed)?;
    let mut adam = AdamState::new(&clf.params);
    let mut report = TrainReport::default();
    for step in 1..=cfg.steps {
        let bseed = batch_seed(cfg.seed ^ 0xC1A5_51F1, step);
        let mut rng = ChaCha8Rng::seed_from_u64(bseed);
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..rows)).collect();
        let x0 = x.select_rows(&idx)?;
        let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let ts = sample_timesteps(&mut rng, sched.steps(), cfg.batch_size);
        let eps = Tensor::standard_normal(vec![cfg.batch_size, dim], &mut rng);
        let xt = sched.forward_sample_rows(&x0, &ts, &eps)?;

        let mut tape = Tape::new();
        let p = tape.params(&clf.params);
        let xv = tape.leaf(xt);
        let logits = clf.logits_on(&mut tape, &p, xv, &ts)?;
        let lp = tape.log_softmax(logits)?;
        let picked = tape.pick(lp, &ys)?;
        let m = tape.mean(picked);
        let loss = tape.scale(m, -1.0);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("classifier loss {value} (batch seed {bseed})"),
            });
        }
        let grads = tape.backward(loss)?.params();
        adam.step(&mut clf.params, &grads, &adam_cfg)?;
        report.history.push((step, value));
    }
    Ok((clf, report))
}

/// `eps_theta(x_t, t) - scale * sqrt(1 - ab_t) * grad log p(y | x_t)`.
/// A zero scale returns the unguided prediction untouched.
pub fn guided_epsilon<M: EpsModel + ?Sized>(
    model: &M,
    clf: &GuidanceClassifier,
    sched: &NoiseSchedule,
    xt: &Tensor,
    t: usize,
    ys: &[usize],
    scale: f64,
) -> Result<Tensor> {
    let eps = predict(model, xt, t)?;
    guide(clf, sched, xt, t, ys, scale, eps)
}

fn guide(clf: &GuidanceClassifier, sched: &NoiseSchedule, xt: &Tensor, t: usize, ys: &[usize], scale: f64, eps: Tensor) -> Result<Tensor> {
    if scale == 0.0 {
        return Ok(eps);
    }
    let grad = clf.log_prob_grad(xt, t, ys)?;
    let c = scale * (1.0 - sched.alpha_bar(t)).sqrt();
    eps.zip_with(&grad, |e, g| e - c * g)
}

/// Guided deterministic sampling with Anderson acceleration (`k = 0`
/// disables it). Starting noise matches the unconditional samplers.
#[allow(clippy::too_many_arguments)]
pub fn conditional_sample_report<M: EpsModel + ?Sized>(
    model: &M,
    clf: &GuidanceClassifier,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    y: usize,
    scale: f64,
    n: usize,
    k: usize,
) -> Result<AcceleratedOutput> {
    let start = start_noise(model, clf, cfg, n)?;
    let ys = vec![y; n];
    accelerate_from(sched, cfg, k, start, |x, t| {
        let eps = predict(model, x, t)?;
        guide(clf, sched, x, t, &ys, scale, eps)
    })
}

fn start_noise<M: EpsModel + ?Sized>(model: &M, clf: &GuidanceClassifier, cfg: &SampleConfig, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    if clf.feature_dim() != model.feature_dim() {
        return Err(Error::dim("classifier and denoiser feature widths differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(Tensor::standard_normal(vec![n, model.feature_dim()], &mut rng))
}

/// `n` samples conditioned on label `y`. DDIM mode runs the accelerated
/// loop with table size `k`; DDPM mode runs guided ancestral sampling and
/// requires `k = 0`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_sample<M: EpsModel + ?Sized>(
    model: &M,
    clf: &GuidanceClassifier,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    y: usize,
    scale: f64,
    n: usize,
    k: usize,
) -> Result<Tensor> {
    if y >= clf.num_classes() {
        return Err(Error::contract(format!("label {y} outside 0..{}", clf.num_classes())));
    }
    match cfg.mode {
        SampleMode::Ddim => Ok(conditional_sample_report(model, clf, sched, cfg, y, scale, n, k)?.samples),
        SampleMode::Ddpm => {
            if k > 0 {
                return Err(Error::config("acceleration needs the deterministic update; use mode ddim or k = 0"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let start = Tensor::standard_normal(vec![n, model.feature_dim()], &mut rng);
            if clf.feature_dim() != model.feature_dim() {
                return Err(Error::dim("classifier and denoiser feature widths differ"));
            }
            let ys = vec![y; n];
            let out = reverse_with(sched, cfg, start, &mut rng, |x, t| {
                let eps = predict(model, x, t)?;
                guide(clf, sched, x, t, &ys, scale, eps)
            })?;
            Ok(out.samples)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_class_blobs;
    use crate::denoiser::EpsFn;
    use crate::sampler::sample;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(50, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn logistic_gradient_hand_values() {
        let clf = GuidanceClassifier::binary_logistic(&[1.0, 0.0], 0.0).unwrap();
        let x = Tensor::zeros(vec![1, 2]);
        let g = clf.log_prob_grad(&x, 1, &[1]).unwrap();
        assert_eq!(g.data(), &[0.5, 0.0]);
        let far = Tensor::matrix(1, 2, vec![60.0, 0.0]).unwrap();
        let g = clf.log_prob_grad(&far, 1, &[1]).unwrap();
        assert!(g.data()[0].abs() < 1e-20);
    }

    #[test]
    fn probabilities_normalize() {
        let clf = GuidanceClassifier::new(ClassifierKind::Mlp { hidden: 7 }, 3, 4, Some(8), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::standard_normal(vec![20, 3], &mut rng).scale(5.0);
        let p = clf.probs(&x, 17).unwrap();
        for i in 0..20 {
            assert!(p.row(i).iter().all(|v| *v > 0.0));
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn randomized(kind: ClassifierKind, embed: Option<usize>) -> GuidanceClassifier {
        let mut clf = GuidanceClassifier::new(kind, 4, 3, embed, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let names: Vec<String> = clf.params().names().map(String::from).collect();
        for n in names {
            let shape = clf.params().get(&n).unwrap().shape().to_vec();
            clf.params_mut().assign(&n, Tensor::uniform(shape, 1.0, &mut rng)).unwrap();
        }
        clf
    }

    #[test]
    fn analytic_gradient_equals_tape() {
        let clf = randomized(ClassifierKind::Logistic, Some(6));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::standard_normal(vec![5, 4], &mut rng);
        let ys = [0, 1, 2, 1, 0];
        let a = clf.log_prob_grad(&x, 9, &ys).unwrap();
        let b = clf.log_prob_grad_autodiff(&x, 9, &ys).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let clf = randomized(ClassifierKind::Mlp { hidden: 5 }, Some(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::standard_normal(vec![3, 4], &mut rng);
        let ys = [2, 0, 1];
        let g = clf.log_prob_grad(&x, 30, &ys).unwrap();
        let h = 1e-5;
        let f = |x: &Tensor| -> f64 {
            let lp = clf.log_probs(x, 30).unwrap();
            (0..3).map(|i| lp.row(i)[ys[i]]).sum()
        };
        for idx in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[idx] += h;
            let mut m = x.clone();
            m.data_mut()[idx] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let a = g.data()[idx];
            assert!((a - num).abs() <= 1e-4 * a.abs().max(num.abs()).max(1e-4), "{a} vs {num}");
        }
    }

    #[test]
    fn guided_epsilon_scaling() {
        let s = sched();
        let model = EpsFn::new(1, |x: &Tensor, _: &[usize]| Ok(x.scale(0.3)));
        let clf = GuidanceClassifier::binary_logistic(&[2.0], 0.0).unwrap();
        let x = Tensor::matrix(2, 1, vec![0.4, -1.0]).unwrap();
        let base = model.predict_eps(&x, &[20, 20]).unwrap();
        assert_eq!(guided_epsilon(&model, &clf, &s, &x, 20, &[1, 1], 0.0).unwrap(), base);
        let g1 = guided_epsilon(&model, &clf, &s, &x, 20, &[1, 1], 1.0).unwrap();
        let g2 = guided_epsilon(&model, &clf, &s, &x, 20, &[1, 1], 2.0).unwrap();
        for i in 0..2 {
            let d1 = base.data()[i] - g1.data()[i];
            let d2 = base.data()[i] - g2.data()[i];
            assert!(d1 > 0.0, "guided eps should shrink toward class 1");
            assert!((d2 - 2.0 * d1).abs() <= 1e-15 * d2.abs().max(1.0));
        }
        let zero = GuidanceClassifier::binary_logistic(&[0.0], 0.0).unwrap();
        assert_eq!(guided_epsilon(&model, &zero, &s, &x, 20, &[1, 1], 1.0).unwrap(), base);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Tensor::zeros(vec![4, 2]);
        let err = train_classifier(&x, &[1, 1, 1, 1], &sched(), &ClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn blobs_cfg(seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            kind: ClassifierKind::Logistic,
            time_conditioned: true,
            lr: 0.02,
            steps: 300,
            seed,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let s = sched();
        let train = two_class_blobs(1000, 3, 4.0, 0.5, 1).unwrap();
        let test = two_class_blobs(500, 3, 4.0, 0.5, 2).unwrap();
        let (clf, rep) = train_classifier(&train.features, train.labels.as_ref().unwrap(), &s, &blobs_cfg(0)).unwrap();
        let acc = clf.accuracy(&test.features, test.labels.as_ref().unwrap(), 1).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
        assert!(rep.history.last().unwrap().1 < rep.history[0].1);
        let (again, _) = train_classifier(&train.features, train.labels.as_ref().unwrap(), &s, &blobs_cfg(0)).unwrap();
        assert_eq!(again, clf);
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let s = sched();
        let train = two_class_blobs(1000, 3, 4.0, 0.5, 1).unwrap();
        let test = two_class_blobs(2000, 3, 4.0, 0.5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
        let (clf, _) = train_classifier(&train.features, &noise, &s, &blobs_cfg(1)).unwrap();
        let acc = clf.accuracy(&test.features, test.labels.as_ref().unwrap(), 1).unwrap();
        assert!((acc - 0.5).abs() < 0.1, "accuracy {acc}");
    }

    #[test]
    fn scale_zero_matches_unconditional() {
        let s = sched();
        let model = EpsFn::new(2, |x: &Tensor, _: &[usize]| Ok(x.scale(0.5)));
        let clf = GuidanceClassifier::binary_logistic(&[1.0, -1.0], 0.2).unwrap();
        for mode in [SampleMode::Ddim, SampleMode::Ddpm] {
            let cfg = SampleConfig::new(mode, 50, 13);
            let uncond = sample(&model, &s, &cfg, 6).unwrap().samples;
            let cond = conditional_sample(&model, &clf, &s, &cfg, 1, 0.0, 6, 0).unwrap();
            assert_eq!(cond, uncond);
        }
        let cfg = SampleConfig::new(SampleMode::Ddpm, 50, 13);
        assert!(conditional_sample(&model, &clf, &s, &cfg, 1, 1.0, 2, 3).is_err());
        assert!(conditional_sample(&model, &clf, &s, &cfg, 2, 1.0, 2, 0).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        let clf = randomized(ClassifierKind::Mlp { hidden: 5 }, Some(4));
        let back = GuidanceClassifier::from_parts(&clf.descriptor(), clf.params().clone()).unwrap();
        assert_eq!(back, clf);
        assert!(GuidanceClassifier::from_parts(&[3.0, 1.0, 2.0, 0.0, 0.0], ParamSet::new()).is_err());
    }
}
