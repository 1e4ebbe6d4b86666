//! Denoising diffusion models for fixed-width tabular records.
//!
//! The crate covers the whole pipeline: a small reverse-mode tape
//! ([`autograd`]), variance schedules ([`schedule`]), MLP and 1-D U-Net
//! noise predictors ([`denoiser`]), training ([`trainer`]), DDPM/DDIM
//! reverse processes ([`sampler`]), Anderson-accelerated sampling
//! ([`anderson`]), classifier guidance ([`guidance`]), evaluation metrics
//! ([`metrics`]) and file formats ([`data`], [`checkpoint`], [`config`]).

pub mod anderson;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ParamSet, Tensor};
