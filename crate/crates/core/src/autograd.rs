//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Only the operations the denoisers and classifiers need are provided.
//! Every node stores its forward value; `backward` walks the node list in
//! reverse and accumulates adjoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{conv1d_backward, conv1d_forward, gemm_nt, gemm_tn, Conv1dGeom, ParamSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Conv1d(Var, Var, Conv1dGeom),
    AddChannelBias(Var, Var),
    AddChannelVec(Var, Var),
    Upsample2(Var),
    PadLen(Var),
    CropLen(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    ConcatChannels(Var, Var),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for a single forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to any node; zeros if the node does not
    /// influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| self.wrt(*v))
    }

    /// Gradients of every parameter registered through [`Tape::param`],
    /// shaped like the parameters.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(n, v)| (n.clone(), self.wrt(*v)))
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant or input; gradients are still available through
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named trainable parameter.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.params.push((name.to_string(), v));
        v
    }

    /// Register every tensor of a parameter set, returning handles by name.
    pub fn params(&mut self, set: &ParamSet) -> BTreeMap<String, Var> {
        set.iter().map(|(n, t)| (n.to_string(), self.param(n, t))).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(Error::dim(format!("row bias of length {} for {n} columns", b.len())));
        }
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = Conv1dGeom::infer(self.value(x), self.value(kernel), stride, padding)?;
        let mut out = vec![0.0; g.batch * g.out_ch * g.out_len];
        conv1d_forward(&g, self.value(x).data(), self.value(kernel).data(), &mut out);
        let out = Tensor::new(vec![g.batch, g.out_ch, g.out_len], out)?;
        Ok(self.push(out, Op::Conv1d(x, kernel, g)))
    }

    /// `x[B×C×L] + bias[C]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        let bv = self.value(bias);
        if bv.len() != c {
            return Err(Error::dim(format!("channel bias of length {} for {c} channels", bv.len())));
        }
        let mut out = self.value(x).clone();
        let bias_data = bv.data().to_vec();
        for bi in 0..b {
            for (ci, &bc) in bias_data.iter().enumerate() {
                let base = (bi * c + ci) * l;
                for v in &mut out.data_mut()[base..base + l] {
                    *v += bc;
                }
            }
        }
        Ok(self.push(out, Op::AddChannelBias(x, bias)))
    }

    /// `x[B×C×L] + v[B×C]` broadcast along the length axis.
    pub fn add_channel_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        let (vb, vc) = self.value(v).dims2()?;
        if (vb, vc) != (b, c) {
            return Err(Error::dim(format!(
                "per-sample channel vector {vb}×{vc} for input {b}×{c}×{l}"
            )));
        }
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(x).clone();
        for (bc, &add) in vd.iter().enumerate() {
            for o in &mut out.data_mut()[bc * l..(bc + 1) * l] {
                *o += add;
            }
        }
        Ok(self.push(out, Op::AddChannelVec(x, v)))
    }

    /// Nearest-neighbour ×2 upsampling along the length axis.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * l * 2);
        for row in src.chunks(l) {
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
        let out = Tensor::new(vec![b, c, 2 * l], out)?;
        Ok(self.push(out, Op::Upsample2(x)))
    }

    /// Zero-pad the length axis on the right up to `len`.
    pub fn pad_len(&mut self, x: Var, len: usize) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if len < l {
            return Err(Error::dim(format!("cannot pad length {l} down to {len}")));
        }
        let mut out = vec![0.0; b * c * len];
        for (r, row) in self.value(x).data().chunks(l).enumerate() {
            out[r * len..r * len + l].copy_from_slice(row);
        }
        let out = Tensor::new(vec![b, c, len], out)?;
        Ok(self.push(out, Op::PadLen(x)))
    }

    /// Keep the first `len` positions of the length axis.
    pub fn crop_len(&mut self, x: Var, len: usize) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if len > l || len == 0 {
            return Err(Error::dim(format!("cannot crop length {l} to {len}")));
        }
        let mut out = Vec::with_capacity(b * c * len);
        for row in self.value(x).data().chunks(l) {
            out.extend_from_slice(&row[..len]);
        }
        let out = Tensor::new(vec![b, c, len], out)?;
        Ok(self.push(out, Op::CropLen(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.value(a).dims2()?;
        let (mb, nb) = self.value(b).dims2()?;
        if m != mb {
            return Err(Error::dim(format!("concat of {m} and {mb} rows")));
        }
        let mut out = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let out = Tensor::new(vec![m, na + nb], out)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Concatenate `[B×Ca×L]` and `[B×Cb×L]` along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, la) = self.value(a).dims3()?;
        let (bb, cb, lb) = self.value(b).dims3()?;
        if ba != bb || la != lb {
            return Err(Error::dim(format!(
                "channel concat of {ba}×{ca}×{la} and {bb}×{cb}×{lb}"
            )));
        }
        let mut out = Vec::with_capacity(ba * (ca + cb) * la);
        for bi in 0..ba {
            out.extend_from_slice(&self.value(a).data()[bi * ca * la..(bi + 1) * ca * la]);
            out.extend_from_slice(&self.value(b).data()[bi * cb * la..(bi + 1) * cb * la]);
        }
        let out = Tensor::new(vec![ba, ca + cb, la], out)?;
        Ok(self.push(out, Op::ConcatChannels(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row-wise log-softmax of a `[B×C]` matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.value(a).dims2()?;
        let mut out = self.value(a).clone();
        for i in 0..m {
            let row = out.row_mut(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// `out[i] = a[i, idx[i]]`, a `[B]` vector.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::dim(format!("pick of {} indices from {m}×{n}", idx.len())));
        }
        let out: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| self.value(a).data()[i * n + j])
            .collect();
        Ok(self.push(Tensor::vector(out), Op::Pick(a, idx.to_vec())))
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, Tensor::full(self.value(loss).shape().to_vec(), 1.0))
    }

    /// Backpropagate an arbitrary upstream adjoint seeded at `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        self.value(out).same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (_, n) = self.value(*b).dims2()?;
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g.data(), self.value(*b).data(), &mut da, m, n, k);
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut grads, *a, Tensor::new(vec![m, k], da)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, n], db)?);
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = g.dims2()?;
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (d, &gv) in db.iter_mut().zip(g.row(i)) {
                            *d += gv;
                        }
                    }
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_with(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_with(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Silu(a) => {
                    let da = g.zip_with(self.value(*a), |gv, x| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })?;
                    accumulate(&mut grads, *a, da);
                }
                Op::Conv1d(x, w, geom) => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    let mut dw = vec![0.0; self.value(*w).len()];
                    conv1d_backward(
                        geom,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        g.data(),
                        &mut dx,
                        &mut dw,
                    );
                    let xs = self.value(*x).shape().to_vec();
                    let ws = self.value(*w).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                    accumulate(&mut grads, *w, Tensor::new(ws, dw)?);
                }
                Op::AddChannelBias(x, bias) => {
                    let (b, c, l) = g.dims3()?;
                    let mut db = vec![0.0; c];
                    for bi in 0..b {
                        for (ci, d) in db.iter_mut().enumerate() {
                            let base = (bi * c + ci) * l;
                            *d += g.data()[base..base + l].iter().sum::<f64>();
                        }
                    }
                    let bs = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(bs, db)?);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::AddChannelVec(x, v) => {
                    let (b, c, l) = g.dims3()?;
                    let dv: Vec<f64> = g.data().chunks(l).map(|r| r.iter().sum()).collect();
                    accumulate(&mut grads, *v, Tensor::new(vec![b, c], dv)?);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Upsample2(x) => {
                    let dx: Vec<f64> = g.data().chunks(2).map(|p| p[0] + p[1]).collect();
                    let xs = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                }
                Op::PadLen(x) => {
                    let (_, _, l) = self.value(*x).dims3()?;
                    let (_, _, lp) = g.dims3()?;
                    let mut dx = Vec::with_capacity(self.value(*x).len());
                    for row in g.data().chunks(lp) {
                        dx.extend_from_slice(&row[..l]);
                    }
                    let xs = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                }
                Op::CropLen(x) => {
                    let (_, _, l) = self.value(*x).dims3()?;
                    let (_, _, lc) = g.dims3()?;
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (r, row) in g.data().chunks(lc).enumerate() {
                        dx[r * l..r * l + lc].copy_from_slice(row);
                    }
                    let xs = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                }
                Op::Reshape(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.clone().reshape(xs)?);
                }
                Op::ConcatCols(a, b) => {
                    let (m, na) = self.value(*a).dims2()?;
                    let (_, nb) = self.value(*b).dims2()?;
                    let mut da = Vec::with_capacity(m * na);
                    let mut db = Vec::with_capacity(m * nb);
                    for i in 0..m {
                        let row = g.row(i);
                        da.extend_from_slice(&row[..na]);
                        db.extend_from_slice(&row[na..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, na], da)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![m, nb], db)?);
                }
                Op::ConcatChannels(a, b) => {
                    let (bsz, ca, l) = self.value(*a).dims3()?;
                    let (_, cb, _) = self.value(*b).dims3()?;
                    let mut da = Vec::with_capacity(bsz * ca * l);
                    let mut db = Vec::with_capacity(bsz * cb * l);
                    for chunk in g.data().chunks((ca + cb) * l) {
                        da.extend_from_slice(&chunk[..ca * l]);
                        db.extend_from_slice(&chunk[ca * l..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![bsz, ca, l], da)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![bsz, cb, l], db)?);
                }
                Op::Sum(a) => {
                    let s = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(s, g.item()));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let scale = g.item() / t.len() as f64;
                    accumulate(&mut grads, *a, Tensor::full(t.shape().to_vec(), scale));
                }
                Op::LogSoftmax(a) => {
                    let (m, _) = g.dims2()?;
                    let y = &node.value;
                    let mut da = g.clone();
                    for i in 0..m {
                        let gsum: f64 = g.row(i).iter().sum();
                        for (d, &lp) in da.row_mut(i).iter_mut().zip(y.row(i)) {
                            *d -= lp.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Pick(a, idx) => {
                    let src = self.value(*a);
                    let (_, n) = src.dims2()?;
                    let mut da = Tensor::zeros(src.shape().to_vec());
                    for (i, &j) in idx.iter().enumerate() {
                        da.data_mut()[i * n + j] += g.data()[i];
                    }
                    accumulate(&mut grads, *a, da);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes[..=out.0].iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params: self.params.iter().filter(|(_, v)| v.0 <= out.0).cloned().collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
