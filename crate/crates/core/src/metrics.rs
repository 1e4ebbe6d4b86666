//! Fidelity and utility metrics for synthetic tabular data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::{AdamConfig, AdamState};
use crate::ParamSet;

/// Row-major matrix with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("binary matrix entries must be 0 or 1"));
        }
        Ok(BinaryMatrix { rows, cols, data })
    }

    /// Exact conversion; every entry must already be 0.0 or 1.0.
    pub fn from_tensor(x: &Tensor) -> Result<Self> {
        let (rows, cols) = x.dims2()?;
        let mut data = Vec::with_capacity(x.len());
        for &v in x.data() {
            if v == 0.0 {
                data.push(0);
            } else if v == 1.0 {
                data.push(1);
            } else {
                return Err(Error::contract(format!("value {v} is not binary")));
            }
        }
        Ok(BinaryMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.iter().map(|&v| v as f64).collect())
            .expect("shape matches data")
    }
}

/// `1` where the value is strictly above `threshold`.
pub fn binarize(x: &Tensor, threshold: f64) -> Result<BinaryMatrix> {
    if !threshold.is_finite() {
        return Err(Error::contract("threshold must be finite"));
    }
    let (rows, cols) = x.dims2()?;
    let data = x.data().iter().map(|&v| u8::from(v > threshold)).collect();
    BinaryMatrix::new(rows, cols, data)
}

/// Draw each entry as Bernoulli with the value clipped to `[0, 1]`.
pub fn bernoulli_round(x: &Tensor, seed: u64) -> Result<BinaryMatrix> {
    let (rows, cols) = x.dims2()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .data()
        .iter()
        .map(|&v| u8::from(rng.gen::<f64>() < v.clamp(0.0, 1.0)))
        .collect();
    BinaryMatrix::new(rows, cols, data)
}

/// Per-column success rate.
pub fn dimension_probs(m: &BinaryMatrix) -> Result<Vec<f64>> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::contract("dimension probabilities of an empty matrix"));
    }
    let mut counts = vec![0usize; m.cols];
    for row in m.data.chunks(m.cols) {
        for (c, &v) in counts.iter_mut().zip(row) {
            *c += v as usize;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / m.rows as f64).collect())
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn sae(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

pub fn rmse(p: &[f64], q: &[f64]) -> f64 {
    let d = p.len().max(1) as f64;
    (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dim_probs_real: Vec<f64>,
    pub dim_probs_synth: Vec<f64>,
    /// `None` when either probability vector is constant.
    pub rho: Option<f64>,
    pub sae: f64,
    pub rmse: f64,
}

impl MetricsReport {
    /// `metric,value` rows; an undefined correlation is written as `NA`.
    pub fn to_csv(&self) -> String {
        let rho = self.rho.map_or_else(|| "NA".to_string(), |r| r.to_string());
        format!("metric,value\nrho,{rho}\nsae,{}\nrmse,{}\n", self.sae, self.rmse)
    }

    /// `feature,p_real,p_synth` rows.
    pub fn probs_csv(&self) -> String {
        let mut s = String::from("feature,p_real,p_synth\n");
        for (j, (a, b)) in self.dim_probs_real.iter().zip(&self.dim_probs_synth).enumerate() {
            s.push_str(&format!("{},{a},{b}\n", j + 1));
        }
        s
    }

    pub fn summary(&self) -> String {
        let rho = self.rho.map_or_else(|| "undefined (constant probabilities)".to_string(), |r| format!("{r:.4}"));
        format!(
            "features: {}\nrho: {rho}\nSAE: {:.4}\nRMSE: {:.4}\n",
            self.dim_probs_real.len(),
            self.sae,
            self.rmse
        )
    }
}

pub fn eval_binary(real: &BinaryMatrix, synth: &BinaryMatrix) -> Result<MetricsReport> {
    if real.cols != synth.cols {
        return Err(Error::dim(format!("real has {} features, synthetic {}", real.cols, synth.cols)));
    }
    let p = dimension_probs(real)?;
    let q = dimension_probs(synth)?;
    Ok(MetricsReport {
        rho: pearson(&p, &q),
        sae: sae(&p, &q),
        rmse: rmse(&p, &q),
        dim_probs_real: p,
        dim_probs_synth: q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Scott's rule `1.06 * sd * n^(-1/5)`.
    Auto,
    Fixed(f64),
}

/// Scott's rule with the sample standard deviation; constant data uses a
/// unit scale.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    1.06 * sd * n.powf(-0.2)
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde(values: &[f64], bandwidth: Bandwidth, grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::contract("kde needs at least one value"));
    }
    let h = match bandwidth {
        Bandwidth::Auto => scott_bandwidth(values),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("bandwidth must be positive, got {h}")));
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            norm * values
                .iter()
                .map(|&v| {
                    let u = (g - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

/// Evenly spaced grid of `n >= 2` points covering both samples with a
/// margin of three bandwidths.
pub fn kde_grid(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let all = a.iter().chain(b);
    let lo = all.clone().fold(f64::INFINITY, |m, &v| m.min(v));
    let hi = all.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let pad = 3.0 * scott_bandwidth(a).max(scott_bandwidth(b));
    let (lo, hi) = (lo - pad, hi + pad);
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// `feature,grid,density_real,density_synth` rows, one block per column.
pub fn kde_csv(real: &Tensor, synth: &Tensor, points: usize) -> Result<String> {
    let (_, d) = real.dims2()?;
    let (_, d2) = synth.dims2()?;
    if d != d2 {
        return Err(Error::dim(format!("real has {d} features, synthetic {d2}")));
    }
    let col = |x: &Tensor, j: usize| -> Vec<f64> { (0..x.shape()[0]).map(|i| x.row(i)[j]).collect() };
    let mut s = String::from("feature,grid,density_real,density_synth\n");
    for j in 0..d {
        let (a, b) = (col(real, j), col(synth, j));
        let grid = kde_grid(&a, &b, points);
        let da = kde(&a, Bandwidth::Auto, &grid)?;
        let db = kde(&b, Bandwidth::Auto, &grid)?;
        for ((g, x), y) in grid.iter().zip(&da).zip(&db) {
            s.push_str(&format!("{},{g},{x},{y}\n", j + 1));
        }
    }
    Ok(s)
}

/// Mann-Whitney AUC of `scores` for positive label `1`; ties count half.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("scores and labels differ in length"));
    }
    if labels.iter().any(|&l| l > 1) || scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("auc needs binary labels and non-NaN scores"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("auc needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over tied groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub lr: f64,
    pub steps: usize,
    /// L2 penalty on the weights.
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lr: 0.05,
            steps: 500,
            l2: 1e-4,
        }
    }
}

/// Binary logistic regression `P(y=1|x) = sigmoid(w.x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = x.dims2()?;
        if d != self.w.len() {
            return Err(Error::dim(format!("model has {} weights, input {d} features", self.w.len())));
        }
        Ok((0..n)
            .map(|i| x.row(i).iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
            .collect())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Full-batch Adam on the mean log-loss from zero initialization.
pub fn fit_logistic(x: &Tensor, y: &[usize], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let (n, d) = x.dims2()?;
    if y.len() != n || n == 0 {
        return Err(Error::dim("labels must match a non-empty design matrix"));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::contract("logistic regression needs binary labels"));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    adam_cfg.validate()?;
    let mut params = ParamSet::new();
    params.insert("w", Tensor::zeros(vec![d]))?;
    params.insert("b", Tensor::zeros(vec![1]))?;
    let mut adam = AdamState::new(&params);
    for _ in 0..cfg.steps {
        let w = params.get("w")?.data().to_vec();
        let b = params.get("b")?.item();
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let z = x.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let r = sigmoid(z) - yi as f64;
            for (g, a) in gw.iter_mut().zip(x.row(i)) {
                *g += r * a;
            }
            gb += r;
        }
        let inv = 1.0 / n as f64;
        let gw: Vec<f64> = gw.iter().zip(&w).map(|(g, wv)| g * inv + 2.0 * cfg.l2 * wv).collect();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(gw));
        grads.insert("b".to_string(), Tensor::scalar(gb * inv));
        adam.step(&mut params, &grads, &adam_cfg)?;
    }
    Ok(LogisticModel {
        w: params.get("w")?.data().to_vec(),
        b: params.get("b")?.item(),
    })
}

/// Test AUC of a logistic classifier trained on the real training rows
/// plus the first `n` synthetic rows, for `n = 0, step, 2 step, ...` up to
/// the pool size.
pub fn augmentation_curve(
    real_train: (&Tensor, &[usize]),
    synth_pool: (&Tensor, &[usize]),
    real_test: (&Tensor, &[usize]),
    step: usize,
    cfg: &LogisticConfig,
) -> Result<Vec<(usize, f64)>> {
    if step == 0 {
        return Err(Error::config("augmentation step must be positive"));
    }
    let (xr, yr) = real_train;
    let (xs, ys) = synth_pool;
    let (xt, yt) = real_test;
    let (nr, d) = xr.dims2()?;
    let (ns, ds) = xs.dims2()?;
    if ds != d || ys.len() != ns || yr.len() != nr {
        return Err(Error::dim("augmentation inputs disagree in shape"));
    }
    let mut out = Vec::new();
    let mut n = 0;
    while n <= ns {
        let mut data = xr.data().to_vec();
        data.extend_from_slice(&xs.data()[..n * d]);
        let x = Tensor::new(vec![nr + n, d], data)?;
        let mut y = yr.to_vec();
        y.extend_from_slice(&ys[..n]);
        let model = fit_logistic(&x, &y, cfg)?;
        out.push((n, auc(&model.scores(xt)?, yt)?));
        n += step;
    }
    Ok(out)
}

/// `n_synth,auc` rows.
pub fn augmentation_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("n_synth,auc\n");
    for (n, a) in curve {
        s.push_str(&format!("{n},{a}\n"));
    }
    s
}
