//! Dense row-major `f64` tensors, named parameter sets, and the two
//! structured kernels (matrix product and 1-D cross-correlation) shared by
//! the tape and the plain inference path.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero-sized axis in shape {shape:?}")));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Row vector `[n]`.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data: if data.is_empty() { vec![0.0] } else { data },
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor { shape, data }
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = *self.shape.last().unwrap();
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Stack equally sized rows into a `[rows.len() × cols]` matrix.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Tensor> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// Gather the listed rows of a matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (_, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), cols], data)
    }
}

/// `a[m×k] · b[k×n]`, accumulating over `k` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {m}×{k} by {k2}×{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

// out[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Geometry of a 1-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    pub fn infer(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (batch, in_ch, len) = x.dims3()?;
        let (out_ch, kin, k) = kernel.dims3()?;
        if kin != in_ch {
            return Err(Error::dim(format!(
                "conv1d kernel expects {kin} input channels, input has {in_ch}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv1d stride must be positive"));
        }
        if len + 2 * padding < k {
            return Err(Error::dim(format!(
                "conv1d kernel {k} longer than padded length {}",
                len + 2 * padding
            )));
        }
        Ok(Conv1dGeom {
            batch,
            in_ch,
            out_ch,
            len,
            kernel: k,
            stride,
            padding,
            out_len: (len + 2 * padding - k) / stride + 1,
        })
    }

    #[inline]
    fn src(&self, l: usize, j: usize) -> Option<usize> {
        let pos = (l * self.stride + j) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }
}

/// Cross-correlation along the last axis of `x[batch×in×len]` with
/// `kernel[out×in×k]`, zero padding on both sides.
pub fn conv1d(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = Conv1dGeom::infer(x, kernel, stride, padding)?;
    let mut out = vec![0.0; g.batch * g.out_ch * g.out_len];
    conv1d_forward(&g, x.data(), kernel.data(), &mut out);
    Tensor::new(vec![g.batch, g.out_ch, g.out_len], out)
}

pub(crate) fn conv1d_forward(g: &Conv1dGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let obase = (b * g.out_ch + o) * g.out_len;
            for l in 0..g.out_len {
                let mut acc = 0.0;
                for i in 0..g.in_ch {
                    let xbase = (b * g.in_ch + i) * g.len;
                    let wbase = (o * g.in_ch + i) * g.kernel;
                    for j in 0..g.kernel {
                        if let Some(pos) = g.src(l, j) {
                            acc += w[wbase + j] * x[xbase + pos];
                        }
                    }
                }
                out[obase + l] = acc;
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    g: &Conv1dGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
) {
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let obase = (b * g.out_ch + o) * g.out_len;
            for l in 0..g.out_len {
                let d = dout[obase + l];
                if d == 0.0 {
                    continue;
                }
                for i in 0..g.in_ch {
                    let xbase = (b * g.in_ch + i) * g.len;
                    let wbase = (o * g.in_ch + i) * g.kernel;
                    for j in 0..g.kernel {
                        if let Some(pos) = g.src(l, j) {
                            dx[xbase + pos] += d * w[wbase + j];
                            dw[wbase + j] += d * x[xbase + pos];
                        }
                    }
                }
            }
        }
    }
}

/// Named parameters with a fixed (sorted) iteration order. Shapes cannot
/// change after insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.map.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    /// Mutable access to the values; the shape stays fixed.
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.map
            .get_mut(name)
            .map(|t| t.data_mut())
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    /// Replace a parameter's values with a tensor of identical shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .map
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name:?} has shape {:?}, refusing {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut [f64])> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v.data_mut()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (b, c, len) = x.dims3().unwrap();
        let (o, _, k) = w.dims3().unwrap();
        let out_len = (len + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(vec![b, o, out_len]);
        for bi in 0..b {
            for oi in 0..o {
                for l in 0..out_len {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for j in 0..k {
                            let p = (l * stride + j) as isize - pad as isize;
                            if p < 0 || p as usize >= len {
                                continue;
                            }
                            acc += w.data()[(oi * c + ci) * k + j]
                                * x.data()[(bi * c + ci) * len + p as usize];
                        }
                    }
                    out.data_mut()[(bi * o + oi) * out_len + l] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_selection() {
        let id = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&id, &m).unwrap(), m);

        let e = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let col = Tensor::matrix(2, 1, vec![2.0, 5.0]).unwrap();
        assert_eq!(matmul(&e, &col).unwrap().data(), &[2.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::standard_normal(vec![3, 4], &mut rng);
        let b = Tensor::standard_normal(vec![4, 2], &mut rng);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv1d_identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::standard_normal(vec![2, 1, 5], &mut rng);
        let k = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv1d(&x, &k, 1, 0).unwrap(), x);

        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let delta = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv1d(&x, &delta, 1, 1).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv1d_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::standard_normal(vec![2, 3, 8], &mut rng);
        let w = Tensor::standard_normal(vec![4, 3, 3], &mut rng);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (3, 2)] {
            let fast = conv1d(&x, &w, stride, pad).unwrap();
            let slow = naive_conv(&x, &w, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv1d_output_length_and_errors() {
        let x = Tensor::zeros(vec![1, 2, 10]);
        let w = Tensor::zeros(vec![3, 2, 3]);
        assert_eq!(conv1d(&x, &w, 2, 1).unwrap().shape(), &[1, 3, 5]);
        assert!(conv1d(&x, &w, 0, 1).is_err());
        let long = Tensor::zeros(vec![3, 2, 13]);
        assert!(conv1d(&x, &long, 1, 1).is_err());
        let wrong_in = Tensor::zeros(vec![3, 1, 3]);
        assert!(conv1d(&x, &wrong_in, 1, 1).is_err());
    }

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn param_set_rejects_duplicates_and_reshapes() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![1])).is_err());
        assert!(p.assign("w", Tensor::zeros(vec![4])).is_err());
        p.assign("w", Tensor::ones(vec![2, 2])).unwrap();
        assert_eq!(p.get("w").unwrap().sum(), 4.0);
    }
}
