//! Datasets: CSV ingestion, standardization and seeded synthetic generators.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Continuous,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(FeatureKind::Binary),
            "continuous" => Ok(FeatureKind::Continuous),
            other => Err(Error::config(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Per-column z-score transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; constant columns
    /// get unit scale.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = x.dims2()?;
        if n == 0 {
            return Err(Error::contract("cannot standardize an empty matrix"));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != self.mean.len() {
            return Err(Error::dim(format!("standardizer has {} columns, input {d}", self.mean.len())));
        }
        let mut out = x.clone();
        for i in 0..n {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.std[j]);
            }
        }
        Ok(out)
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| v * s + m)
    }
}

/// Parameters a synthetic dataset was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    BernoulliProduct { p: Vec<f64> },
    /// Diagonal-covariance components.
    GaussianMixture { means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Labeled isotropic blobs, one mean per class.
    Blobs { means: Vec<Vec<f64>>, std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Model-space features (standardized when `standardizer` is set).
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub kind: FeatureKind,
    pub names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, kind: FeatureKind) -> Result<Self> {
        let (n, d) = features.dims2()?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::dim(format!("{} labels for {n} rows", l.len())));
            }
        }
        if kind == FeatureKind::Binary {
            if let Some(pos) = features.data().iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Parse {
                    row: pos / d + 1,
                    col: pos % d + 1,
                    msg: format!("binary feature has value {}", features.data()[pos]),
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            kind,
            names: (1..=d).map(|j| format!("x{j}")).collect(),
            standardizer: None,
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Standardize continuous features in place, keeping the statistics.
    pub fn standardize(&mut self) -> Result<()> {
        if self.kind == FeatureKind::Continuous && self.standardizer.is_none() {
            let s = Standardizer::fit(&self.features)?;
            self.features = s.transform(&self.features)?;
            self.standardizer = Some(s);
        }
        Ok(())
    }

    /// Map model-space values back to data space.
    pub fn to_data_space(&self, x: &Tensor) -> Result<Tensor> {
        match &self.standardizer {
            Some(s) => s.inverse(x),
            None => Ok(x.clone()),
        }
    }

    /// Features in the original data space.
    pub fn raw_features(&self) -> Result<Tensor> {
        self.to_data_space(&self.features)
    }

    /// Rows with the given label.
    pub fn class_rows(&self, label: usize) -> Result<Tensor> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::contract("dataset has no labels"))?;
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        self.features.select_rows(&idx)
    }
}

fn parse_err(row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        row,
        col,
        msg: msg.into(),
    }
}

/// Parse CSV records. With `labeled` the final column holds integer class
/// labels. Continuous features are standardized. Rows and columns in
/// errors are 1-based and count data rows only.
pub fn read_csv<R: Read>(reader: R, kind: FeatureKind, labeled: bool, header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Option<Vec<String>> = if header {
        Some(rdr.headers()?.iter().map(String::from).collect())
    } else {
        None
    };
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(parse_err(row, rec.len().min(w) + 1, format!("expected {w} fields, found {}", rec.len())));
        }
        let nfeat = if labeled { w.saturating_sub(1) } else { w };
        if nfeat == 0 {
            return Err(parse_err(row, 1, "no feature columns"));
        }
        for (j, field) in rec.iter().enumerate() {
            if labeled && j == nfeat {
                let l: usize = field
                    .parse()
                    .map_err(|_| parse_err(row, j + 1, format!("label {field:?} is not a non-negative integer")))?;
                labels.push(l);
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("{field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, j + 1, "non-finite value"));
            }
            if kind == FeatureKind::Binary && v != 0.0 && v != 1.0 {
                return Err(parse_err(row, j + 1, format!("binary feature has value {v}")));
            }
            data.push(v);
        }
    }
    let w = width.ok_or_else(|| parse_err(1, 1, "no data rows"))?;
    let nfeat = if labeled { w - 1 } else { w };
    let n = data.len() / nfeat;
    let features = Tensor::new(vec![n, nfeat], data)?;
    let mut ds = Dataset::new(features, labeled.then_some(labels), kind)?;
    if let Some(names) = names {
        ds.names = names.into_iter().take(nfeat).collect();
    }
    ds.standardize()?;
    Ok(ds)
}

pub fn load_csv(path: impl AsRef<Path>, kind: FeatureKind, labeled: bool, header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_csv(f, kind, labeled, header)
}

/// Write rows of `x`, optionally with a header line and a label column.
pub fn write_csv<W: std::io::Write>(w: W, x: &Tensor, names: Option<&[String]>, labels: Option<&[usize]>) -> Result<()> {
    let (n, d) = x.dims2()?;
    let mut wr = csv::WriterBuilder::new().from_writer(w);
    if let Some(names) = names {
        let mut h: Vec<String> = names.to_vec();
        if labels.is_some() {
            h.push("label".into());
        }
        wr.write_record(&h)?;
    }
    for i in 0..n {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        debug_assert_eq!(rec.len(), d + labels.is_some() as usize);
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, x: &Tensor, names: Option<&[String]>, labels: Option<&[usize]>) -> Result<()> {
    write_csv(std::fs::File::create(path)?, x, names, labels)
}

/// Independent Bernoulli features with success probabilities `p`.
pub fn bernoulli_product(p: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    if p.is_empty() || n == 0 {
        return Err(Error::config("bernoulli_product needs a non-empty p and n > 0"));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config("bernoulli probabilities must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * p.len())
        .map(|i| if rng.gen::<f64>() < p[i % p.len()] { 1.0 } else { 0.0 })
        .collect();
    let mut ds = Dataset::new(Tensor::new(vec![n, p.len()], data)?, None, FeatureKind::Binary)?;
    ds.truth = Some(GroundTruth::BernoulliProduct { p: p.to_vec() });
    Ok(ds)
}

fn pick_component(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Diagonal Gaussian mixture. Labels record the component of each row.
/// Features are left in data space.
pub fn gaussian_mixture(means: &[Vec<f64>], stds: &[Vec<f64>], weights: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    let d = means.first().map_or(0, Vec::len);
    let ok = d > 0
        && n > 0
        && means.len() == stds.len()
        && means.len() == weights.len()
        && means.iter().chain(stds).all(|v| v.len() == d)
        && stds.iter().flatten().all(|s| *s >= 0.0 && s.is_finite())
        && weights.iter().all(|w| *w >= 0.0 && w.is_finite())
        && weights.iter().sum::<f64>() > 0.0;
    if !ok {
        return Err(Error::config("invalid gaussian_mixture specification"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = pick_component(&mut rng, weights);
        labels.push(c);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(means[c][j] + stds[c][j] * z);
        }
    }
    let mut ds = Dataset::new(Tensor::new(vec![n, d], data)?, Some(labels), FeatureKind::Continuous)?;
    ds.truth = Some(GroundTruth::GaussianMixture {
        means: means.to_vec(),
        stds: stds.to_vec(),
        weights: weights.to_vec(),
    });
    Ok(ds)
}

/// Two equally likely isotropic classes with means `-/+ (sep/2)` along the
/// all-ones direction (normalized), both with standard deviation `std`.
pub fn two_class_blobs(n: usize, dim: usize, sep: f64, std: f64, seed: u64) -> Result<Dataset> {
    if dim == 0 || n == 0 || !(sep.is_finite() && std > 0.0 && std.is_finite()) {
        return Err(Error::config("invalid two_class_blobs specification"));
    }
    let u = 0.5 * sep / (dim as f64).sqrt();
    let means = vec![vec![-u; dim], vec![u; dim]];
    let stds = vec![vec![std; dim]; 2];
    let mut ds = gaussian_mixture(&means, &stds, &[0.5, 0.5], n, seed)?;
    ds.truth = Some(GroundTruth::Blobs { means, std });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_binary_and_labeled() {
        let ds = read_csv("1,0\n0,1\n".as_bytes(), FeatureKind::Binary, false, false).unwrap();
        assert_eq!(ds.features, Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert!(ds.labels.is_none() && ds.standardizer.is_none());

        let ds = read_csv("a,b,y\n1,0,1\n0,1,0\n".as_bytes(), FeatureKind::Binary, true, true).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels, Some(vec![1, 0]));
        assert_eq!(ds.names, vec!["a", "b"]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn parse_errors_carry_location() {
        let cases = [
            ("1,0\n0\n", FeatureKind::Binary, 2, 2),
            ("1,0\n0,x\n", FeatureKind::Continuous, 2, 2),
            ("1,0\n0,2\n", FeatureKind::Binary, 2, 2),
            ("0.5,1\n", FeatureKind::Binary, 1, 1),
        ];
        for (text, kind, r, c) in cases {
            match read_csv(text.as_bytes(), kind, false, false) {
                Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (r, c), "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(matches!(
            read_csv("1,0,-1\n".as_bytes(), FeatureKind::Binary, true, false),
            Err(Error::Parse { row: 1, col: 3, .. })
        ));
    }

    #[test]
    fn standardize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut text = String::new();
        for _ in 0..50 {
            let a: f64 = rng.gen_range(-100.0..100.0);
            let b: f64 = rng.gen_range(0.0..0.01);
            text.push_str(&format!("{a},{b},7\n"));
        }
        let ds = read_csv(text.as_bytes(), FeatureKind::Continuous, false, false).unwrap();
        let s = ds.standardizer.as_ref().unwrap();
        assert_eq!(s.std[2], 1.0);
        let raw = ds.raw_features().unwrap();
        for (i, line) in text.lines().enumerate() {
            for (j, f) in line.split(',').enumerate() {
                let v: f64 = f.parse().unwrap();
                assert!((raw.row(i)[j] - v).abs() < 1e-10);
            }
        }
        let col0: Vec<f64> = (0..50).map(|i| ds.features.row(i)[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn csv_write_read_round_trip() {
        let x = Tensor::matrix(2, 3, vec![0.1, -2.5, 1e-17, 3.0, 4.0, 5.0]).unwrap();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        write_csv(&mut buf, &x, Some(&names), Some(&[1, 0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,b,c,label\n"));
        let mut ds = read_csv(text.as_bytes(), FeatureKind::Continuous, true, true).unwrap();
        ds.features = ds.raw_features().unwrap();
        for (a, b) in ds.features.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn bernoulli_generator_matches_p() {
        let ds = bernoulli_product(&[0.1, 0.9], 10_000, 3).unwrap();
        for (j, p) in [0.1, 0.9].iter().enumerate() {
            let m = (0..ds.len()).map(|i| ds.features.row(i)[j]).sum::<f64>() / ds.len() as f64;
            assert!((m - p).abs() < 0.02);
        }
        assert_eq!(ds, bernoulli_product(&[0.1, 0.9], 10_000, 3).unwrap());
        assert!(bernoulli_product(&[1.5], 10, 0).is_err());
    }

    #[test]
    fn mixture_weights_select_components() {
        let ds = gaussian_mixture(&[vec![0.0], vec![10.0]], &[vec![1.0], vec![1.0]], &[1.0, 0.0], 500, 2).unwrap();
        assert!(ds.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert!(ds.features.data().iter().all(|v| v.abs() < 6.0));
        assert!(gaussian_mixture(&[vec![0.0]], &[vec![1.0], vec![1.0]], &[1.0], 5, 0).is_err());
    }

    #[test]
    fn blobs_are_balanced_and_separated() {
        let ds = two_class_blobs(2000, 4, 6.0, 0.5, 9).unwrap();
        let l = ds.labels.as_ref().unwrap();
        let ones = l.iter().filter(|&&v| v == 1).count();
        assert!((ones as f64 / 2000.0 - 0.5).abs() < 0.05);
        let c1 = ds.class_rows(1).unwrap();
        let mean: f64 = c1.data().iter().sum::<f64>() / c1.len() as f64;
        assert!((mean - 1.5).abs() < 0.05);
    }
}
