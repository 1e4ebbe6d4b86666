use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{fan_in_uniform, DenoiserConfig};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{ParamSet, Tensor};

pub(super) fn init(
    params: &mut ParamSet,
    cfg: &DenoiserConfig,
    hidden: usize,
    layers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut fan = cfg.feature_dim;
    for l in 0..layers {
        params.insert(format!("mlp.{l}.w"), fan_in_uniform(vec![fan, hidden], fan, rng))?;
        params.insert(format!("mlp.{l}.b"), Tensor::zeros(vec![hidden]))?;
        params.insert(
            format!("mlp.{l}.t"),
            fan_in_uniform(vec![cfg.time_dim, hidden], cfg.time_dim, rng),
        )?;
        fan = hidden;
    }
    params.insert("mlp.out.w", Tensor::zeros(vec![hidden, cfg.feature_dim]))?;
    params.insert("mlp.out.b", Tensor::zeros(vec![cfg.feature_dim]))?;
    Ok(())
}

pub(super) fn forward(
    tape: &mut Tape,
    p: &BTreeMap<String, Var>,
    x: Var,
    temb: Var,
    layers: usize,
) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        let lin = tape.linear(h, p[&format!("mlp.{l}.w")], p[&format!("mlp.{l}.b")])?;
        let tt = tape.matmul(temb, p[&format!("mlp.{l}.t")])?;
        let pre = tape.add(lin, tt)?;
        h = tape.silu(pre);
    }
    tape.linear(h, p["mlp.out.w"], p["mlp.out.b"])
}
