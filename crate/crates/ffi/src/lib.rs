//! C ABI for loading trained checkpoints, sampling, and scoring synthetic
//! records. See `include/tabdiff.h`.
//!
//! Every fallible call returns a [`TabdiffStatus`]. On failure the message
//! is available from [`tabdiff_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tabdiff::anderson::accelerated_sample;
use tabdiff::checkpoint::{ClassifierCheckpoint, DenoiserCheckpoint};
use tabdiff::guidance::{conditional_sample, GuidanceClassifier};
use tabdiff::metrics::{auc, binarize, eval_binary};
use tabdiff::sampler::{sample, SampleConfig, SampleMode, SigmaMode};
use tabdiff::{Error, Tensor};

/// Ancestral sampling.
pub const TABDIFF_MODE_DDPM: u32 = 0;
/// Deterministic sampling, optionally Anderson-accelerated.
pub const TABDIFF_MODE_DDIM: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabdiffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Parse = 4,
    Checkpoint = 5,
    NonFinite = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Trained denoiser with its schedule and data scaling.
pub struct TabdiffModel {
    inner: DenoiserCheckpoint,
}

/// Trained guidance classifier.
pub struct TabdiffClassifier {
    inner: GuidanceClassifier,
    schedule: tabdiff::schedule::NoiseSchedule,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TabdiffSampleOptions {
    /// `TABDIFF_MODE_DDPM` or `TABDIFF_MODE_DDIM`.
    pub mode: u32,
    /// Reverse steps; 0 means the full schedule.
    pub steps: usize,
    /// Anderson table size for DDIM, 0 disables.
    pub k: usize,
    pub seed: u64,
    /// Zero ancestral noise in DDPM mode.
    pub sigma_zero: bool,
    /// Threshold outputs of binary models to {0, 1}.
    pub binarize: bool,
    pub threshold: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TabdiffMetrics {
    /// NaN when either probability vector is constant.
    pub rho: f64,
    pub sae: f64,
    pub rmse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TabdiffStatus, msg: impl Into<String>) -> TabdiffStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> TabdiffStatus {
    match e {
        Error::Dimension(_) => TabdiffStatus::Dimension,
        Error::Parse { .. } | Error::Csv(_) => TabdiffStatus::Parse,
        Error::Checkpoint { .. } => TabdiffStatus::Checkpoint,
        Error::NonFinite { .. } => TabdiffStatus::NonFinite,
        Error::Io(_) => TabdiffStatus::Io,
        _ => TabdiffStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TabdiffStatus>) -> TabdiffStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TabdiffStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TabdiffStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, TabdiffStatus>;
}

impl<T> OrStatus<T> for tabdiff::Result<T> {
    fn or_status(self) -> Result<T, TabdiffStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, TabdiffStatus> {
    if path.is_null() {
        return Err(fail(TabdiffStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(TabdiffStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], TabdiffStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TabdiffStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tabdiff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tabdiff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// DDIM with table size 3 over the full schedule, seed 0, threshold 0.5.
#[no_mangle]
pub extern "C" fn tabdiff_sample_options_default() -> TabdiffSampleOptions {
    TabdiffSampleOptions {
        mode: TABDIFF_MODE_DDIM,
        steps: 0,
        k: 3,
        seed: 0,
        sigma_zero: false,
        binarize: true,
        threshold: 0.5,
    }
}

/// Load a denoiser checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_model_load(path: *const c_char, out: *mut *mut TabdiffModel) -> TabdiffStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TabdiffStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let inner = DenoiserCheckpoint::load(path_arg(path)?).or_status()?;
        *out = Box::into_raw(Box::new(TabdiffModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`tabdiff_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_model_free(model: *mut TabdiffModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Features per record, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_model_feature_dim(model: *const TabdiffModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.model.config().feature_dim)
}

/// Schedule length, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_model_steps(model: *const TabdiffModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.schedule.steps())
}

/// Load a classifier checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_classifier_load(path: *const c_char, out: *mut *mut TabdiffClassifier) -> TabdiffStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TabdiffStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let c = ClassifierCheckpoint::load(path_arg(path)?).or_status()?;
        *out = Box::into_raw(Box::new(TabdiffClassifier {
            inner: c.classifier,
            schedule: c.schedule,
        }));
        Ok(())
    })
}

/// # Safety
/// `clf` must be NULL or a handle from [`tabdiff_classifier_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_classifier_free(clf: *mut TabdiffClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

fn sample_config(m: &TabdiffModel, o: &TabdiffSampleOptions) -> Result<SampleConfig, TabdiffStatus> {
    let mode = match o.mode {
        TABDIFF_MODE_DDPM => SampleMode::Ddpm,
        TABDIFF_MODE_DDIM => SampleMode::Ddim,
        x => return Err(fail(TabdiffStatus::InvalidArgument, format!("unknown mode {x}"))),
    };
    if mode == SampleMode::Ddpm && o.k > 0 {
        return Err(fail(TabdiffStatus::InvalidArgument, "k > 0 needs DDIM mode"));
    }
    let steps = if o.steps == 0 { m.inner.schedule.steps() } else { o.steps };
    let mut c = SampleConfig::new(mode, steps, o.seed);
    if o.sigma_zero {
        c.sigma = SigmaMode::Zero;
    }
    Ok(c)
}

/// Map model-space samples to records and copy them row-major into `out`.
unsafe fn write_records(
    m: &TabdiffModel,
    o: &TabdiffSampleOptions,
    x: Tensor,
    out: *mut f64,
    out_len: usize,
) -> Result<(), TabdiffStatus> {
    let x = match &m.inner.standardizer {
        Some(s) => s.inverse(&x).or_status()?,
        None => x,
    };
    let x = if o.binarize && m.inner.kind == tabdiff::data::FeatureKind::Binary {
        binarize(&x, o.threshold).or_status()?.to_tensor()
    } else {
        x
    };
    std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(x.data());
    Ok(())
}

unsafe fn check_out(m: &TabdiffModel, n: usize, out: *mut f64, out_len: usize) -> Result<(), TabdiffStatus> {
    if out.is_null() {
        return Err(fail(TabdiffStatus::NullPointer, "out is null"));
    }
    if n == 0 {
        return Err(fail(TabdiffStatus::InvalidArgument, "n must be positive"));
    }
    let need = n.saturating_mul(m.inner.model.config().feature_dim);
    if out_len != need {
        return Err(fail(
            TabdiffStatus::BufferTooSmall,
            format!("out holds {out_len} values, need {need}"),
        ));
    }
    Ok(())
}

/// Generate `n` records into `out` (row-major, `n * feature_dim` values).
/// `options` may be NULL for the defaults.
///
/// # Safety
/// `model` must be a live handle; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_sample(
    model: *const TabdiffModel,
    options: *const TabdiffSampleOptions,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> TabdiffStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(TabdiffStatus::NullPointer, "model is null"))?;
        let o = options.as_ref().copied().unwrap_or_else(|| tabdiff_sample_options_default());
        check_out(m, n, out, out_len)?;
        let cfg = sample_config(m, &o)?;
        let x = if cfg.mode == SampleMode::Ddim && o.k > 0 {
            accelerated_sample(&m.inner.model, &m.inner.schedule, &cfg, o.k, n).or_status()?.samples
        } else {
            sample(&m.inner.model, &m.inner.schedule, &cfg, n).or_status()?.samples
        };
        write_records(m, &o, x, out, out_len)
    })
}

/// Generate `n` records conditioned on `label` with guidance strength `scale`.
///
/// # Safety
/// As [`tabdiff_sample`]; `clf` must be a live classifier handle.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_sample_guided(
    model: *const TabdiffModel,
    clf: *const TabdiffClassifier,
    options: *const TabdiffSampleOptions,
    label: usize,
    scale: f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> TabdiffStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(TabdiffStatus::NullPointer, "model is null"))?;
        let c = clf
            .as_ref()
            .ok_or_else(|| fail(TabdiffStatus::NullPointer, "classifier is null"))?;
        if c.schedule != m.inner.schedule {
            return Err(fail(TabdiffStatus::InvalidArgument, "classifier schedule differs from the model"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| tabdiff_sample_options_default());
        check_out(m, n, out, out_len)?;
        let cfg = sample_config(m, &o)?;
        let x = conditional_sample(&m.inner.model, &c.inner, &m.inner.schedule, &cfg, label, scale, n, o.k).or_status()?;
        write_records(m, &o, x, out, out_len)
    })
}

/// Fidelity of binary records: both matrices are row-major with `cols`
/// columns and are thresholded at `threshold` first.
///
/// # Safety
/// `real` and `synth` must hold `real_rows * cols` and `synth_rows * cols`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_eval_binary(
    real: *const f64,
    real_rows: usize,
    synth: *const f64,
    synth_rows: usize,
    cols: usize,
    threshold: f64,
    out: *mut TabdiffMetrics,
) -> TabdiffStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TabdiffStatus::NullPointer, "out is null"));
        }
        let len = |r: usize| r.checked_mul(cols).ok_or_else(|| fail(TabdiffStatus::InvalidArgument, "size overflow"));
        let r = slice_arg(real, len(real_rows)?, "real")?;
        let s = slice_arg(synth, len(synth_rows)?, "synth")?;
        let r = Tensor::new(vec![real_rows, cols], r.to_vec()).or_status()?;
        let s = Tensor::new(vec![synth_rows, cols], s.to_vec()).or_status()?;
        let rep = eval_binary(&binarize(&r, threshold).or_status()?, &binarize(&s, threshold).or_status()?).or_status()?;
        *out = TabdiffMetrics {
            rho: rep.rho.unwrap_or(f64::NAN),
            sae: rep.sae,
            rmse: rep.rmse,
        };
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabdiff_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> TabdiffStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TabdiffStatus::NullPointer, "out is null"));
        }
        let s = slice_arg(scores, n, "scores")?;
        let l: Vec<usize> = slice_arg(labels, n, "labels")?.iter().map(|&v| v as usize).collect();
        *out = auc(s, &l).or_status()?;
        Ok(())
    })
}
