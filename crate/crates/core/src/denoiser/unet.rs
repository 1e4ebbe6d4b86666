//! One-dimensional U-Net over the feature axis.
//!
//! Records are treated as single-channel signals. The length is padded on
//! the right to a multiple of `2^levels` and the output cropped back.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{fan_in_uniform, DenoiserConfig};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{ParamSet, Tensor};

/// Scale applied where a residual branch rejoins its skip path.
pub const RESIDUAL_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) fn padded_len(dim: usize, levels: usize) -> usize {
    let m = 1usize << levels;
    dim.div_ceil(m) * m
}

fn conv_params(params: &mut ParamSet, name: &str, out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    params.insert(format!("{name}.w"), fan_in_uniform(vec![out_c, in_c, k], in_c * k, rng))?;
    params.insert(format!("{name}.b"), Tensor::zeros(vec![out_c]))
}

pub(crate) fn res_block_params(
    params: &mut ParamSet,
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    time_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    conv_params(params, &format!("{name}.conv1"), out_c, in_c, k, rng)?;
    params.insert(format!("{name}.temb"), fan_in_uniform(vec![time_dim, out_c], time_dim, rng))?;
    conv_params(params, &format!("{name}.conv2"), out_c, out_c, k, rng)?;
    if in_c != out_c {
        conv_params(params, &format!("{name}.skip"), out_c, in_c, 1, rng)?;
    }
    Ok(())
}

pub(super) fn init(
    params: &mut ParamSet,
    cfg: &DenoiserConfig,
    channels: &[usize],
    res_blocks: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let td = cfg.time_dim;
    conv_params(params, "unet.in", channels[0], 1, k, rng)?;
    let mut c_prev = channels[0];
    for (lvl, &c) in channels.iter().enumerate() {
        for r in 0..res_blocks {
            res_block_params(params, &format!("unet.down{lvl}.res{r}"), c_prev, c, k, td, rng)?;
            c_prev = c;
        }
        conv_params(params, &format!("unet.down{lvl}.pool"), c, c, 3, rng)?;
    }
    let c_mid = *channels.last().unwrap();
    res_block_params(params, "unet.mid", c_mid, c_mid, k, td, rng)?;
    let mut c_prev = c_mid;
    for (lvl, &c) in channels.iter().enumerate().rev() {
        conv_params(params, &format!("unet.up{lvl}.conv"), c, c_prev, k, rng)?;
        for r in 0..res_blocks {
            let in_c = if r == 0 { 2 * c } else { c };
            res_block_params(params, &format!("unet.up{lvl}.res{r}"), in_c, c, k, td, rng)?;
        }
        c_prev = c;
    }
    params.insert("unet.out.w", Tensor::zeros(vec![1, channels[0], 1]))?;
    params.insert("unet.out.b", Tensor::zeros(vec![1]))?;
    Ok(())
}

fn conv(tape: &mut Tape, p: &BTreeMap<String, Var>, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let h = tape.conv1d(x, p[&format!("{name}.w")], stride, pad)?;
    tape.add_channel_bias(h, p[&format!("{name}.b")])
}

/// `(skip(x) + conv2(silu(conv1(silu(x)) + W_t temb))) / sqrt(2)`.
pub(crate) fn res_block(tape: &mut Tape, p: &BTreeMap<String, Var>, name: &str, x: Var, temb: Var, k: usize) -> Result<Var> {
    let pad = k / 2;
    let a = tape.silu(x);
    let h = conv(tape, p, &format!("{name}.conv1"), a, 1, pad)?;
    let tproj = tape.matmul(temb, p[&format!("{name}.temb")])?;
    let h = tape.add_channel_vec(h, tproj)?;
    let h = tape.silu(h);
    let h = conv(tape, p, &format!("{name}.conv2"), h, 1, pad)?;
    let skip = if p.contains_key(&format!("{name}.skip.w")) {
        conv(tape, p, &format!("{name}.skip"), x, 1, 0)?
    } else {
        x
    };
    let sum = tape.add(skip, h)?;
    Ok(tape.scale(sum, RESIDUAL_SCALE))
}

pub(super) fn forward(
    tape: &mut Tape,
    p: &BTreeMap<String, Var>,
    x: Var,
    temb: Var,
    channels: &[usize],
    res_blocks: usize,
    k: usize,
) -> Result<Var> {
    let (batch, dim) = tape.value(x).dims2()?;
    let levels = channels.len();
    let len = padded_len(dim, levels);
    let h = tape.reshape(x, vec![batch, 1, dim])?;
    let h = tape.pad_len(h, len)?;
    let mut h = conv(tape, p, "unet.in", h, 1, k / 2)?;

    let mut skips = Vec::with_capacity(levels);
    for lvl in 0..levels {
        for r in 0..res_blocks {
            h = res_block(tape, p, &format!("unet.down{lvl}.res{r}"), h, temb, k)?;
        }
        skips.push(h);
        h = conv(tape, p, &format!("unet.down{lvl}.pool"), h, 2, 1)?;
    }
    h = res_block(tape, p, "unet.mid", h, temb, k)?;
    for lvl in (0..levels).rev() {
        h = tape.upsample2(h)?;
        h = conv(tape, p, &format!("unet.up{lvl}.conv"), h, 1, k / 2)?;
        h = tape.concat_channels(h, skips[lvl])?;
        for r in 0..res_blocks {
            h = res_block(tape, p, &format!("unet.up{lvl}.res{r}"), h, temb, k)?;
        }
    }
    let h = tape.silu(h);
    let h = conv(tape, p, "unet.out", h, 1, 0)?;
    let h = tape.crop_len(h, dim)?;
    tape.reshape(h, vec![batch, dim])
}
