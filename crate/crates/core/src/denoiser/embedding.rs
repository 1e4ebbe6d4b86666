use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal timestep features: `[sin(t f_0), …, sin(t f_{h-1}), cos(t f_0), …]`
/// with `f_i = 10000^{-i/h}` and `h = dim / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimestepEmbedding {
    dim: usize,
}

impl TimestepEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::config(format!("embedding dim must be even and positive, got {dim}")));
        }
        Ok(TimestepEmbedding { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let half = self.dim / 2;
        let mut out = vec![0.0; self.dim];
        for i in 0..half {
            let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out[i] = arg.sin();
            out[half + i] = arg.cos();
        }
        out
    }

    /// `[ts.len() × dim]` matrix, one row per timestep.
    pub fn embed_batch(&self, ts: &[usize]) -> Tensor {
        let data: Vec<f64> = ts.iter().flat_map(|&t| self.embed(t)).collect();
        Tensor::new(vec![ts.len().max(1), self.dim], data).expect("embedding batch shape")
    }
}
