use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tabdiff::anderson::accelerated_sample;
use tabdiff::checkpoint::{ClassifierCheckpoint, DenoiserCheckpoint, TrainMeta};
use tabdiff::data::FeatureKind;
use tabdiff::denoiser::{Arch, DenoiserConfig, DenoiserModel};
use tabdiff::guidance::{conditional_sample, GuidanceClassifier};
use tabdiff::metrics::binarize;
use tabdiff::sampler::{sample, SampleConfig, SampleMode};
use tabdiff::schedule::NoiseSchedule;
use tabdiff_ffi::*;

fn small_model(dim: usize) -> DenoiserModel {
    let cfg = DenoiserConfig {
        arch: Arch::Mlp { hidden: 16, layers: 1 },
        ..DenoiserConfig::mlp(dim)
    };
    DenoiserModel::new(cfg, 11).unwrap()
}

fn write_model(dir: &Path, kind: FeatureKind) -> (PathBuf, DenoiserCheckpoint) {
    let ckpt = DenoiserCheckpoint {
        model: small_model(3),
        schedule: NoiseSchedule::linear(20, 1e-4, 1e-2).unwrap(),
        meta: TrainMeta { steps: 0, seed: 11, loss: 1.0 },
        kind,
        standardizer: None,
        names: vec!["a".into(), "b".into(), "c".into()],
    };
    let path = dir.join("m.ckpt");
    ckpt.save(&path).unwrap();
    (path, ckpt)
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = tabdiff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn load(path: &Path) -> *mut TabdiffModel {
    let mut m = ptr::null_mut();
    assert_eq!(tabdiff_model_load(cpath(path).as_ptr(), &mut m), TabdiffStatus::Ok);
    m
}

#[test]
fn sampling_matches_library_under_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ckpt) = write_model(dir.path(), FeatureKind::Continuous);
    unsafe {
        let m = load(&path);
        assert_eq!(tabdiff_model_feature_dim(m), 3);
        assert_eq!(tabdiff_model_steps(m), 20);
        let mut opts = tabdiff_sample_options_default();
        opts.seed = 5;
        let mut out = vec![0.0; 12];
        assert_eq!(tabdiff_sample(m, &opts, 4, out.as_mut_ptr(), out.len()), TabdiffStatus::Ok);
        let cfg = SampleConfig::new(SampleMode::Ddim, 20, 5);
        let want = accelerated_sample(&ckpt.model, &ckpt.schedule, &cfg, 3, 4).unwrap().samples;
        assert_eq!(out, want.data());

        opts.mode = TABDIFF_MODE_DDPM;
        opts.k = 0;
        assert_eq!(tabdiff_sample(m, &opts, 4, out.as_mut_ptr(), out.len()), TabdiffStatus::Ok);
        let cfg = SampleConfig::new(SampleMode::Ddpm, 20, 5);
        assert_eq!(out, sample(&ckpt.model, &ckpt.schedule, &cfg, 4).unwrap().samples.data());
        tabdiff_model_free(m);
    }
}

#[test]
fn binary_models_emit_thresholded_records() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ckpt) = write_model(dir.path(), FeatureKind::Binary);
    unsafe {
        let m = load(&path);
        let mut out = vec![0.0; 30];
        assert_eq!(tabdiff_sample(m, ptr::null(), 10, out.as_mut_ptr(), 30), TabdiffStatus::Ok);
        let cfg = SampleConfig::new(SampleMode::Ddim, 20, 0);
        let x = accelerated_sample(&ckpt.model, &ckpt.schedule, &cfg, 3, 10).unwrap().samples;
        assert_eq!(out, binarize(&x, 0.5).unwrap().to_tensor().data());
        tabdiff_model_free(m);
    }
}

#[test]
fn guided_sampling_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ckpt) = write_model(dir.path(), FeatureKind::Continuous);
    let clf = GuidanceClassifier::binary_logistic(&[1.0, -0.5, 0.25], 0.1).unwrap();
    let clf_path = dir.path().join("c.ckpt");
    ClassifierCheckpoint {
        classifier: clf.clone(),
        schedule: ckpt.schedule.clone(),
    }
    .save(&clf_path)
    .unwrap();
    unsafe {
        let m = load(&path);
        let mut c = ptr::null_mut();
        assert_eq!(tabdiff_classifier_load(cpath(&clf_path).as_ptr(), &mut c), TabdiffStatus::Ok);
        let mut out = vec![0.0; 6];
        let opts = tabdiff_sample_options_default();
        assert_eq!(
            tabdiff_sample_guided(m, c, &opts, 1, 2.0, 2, out.as_mut_ptr(), 6),
            TabdiffStatus::Ok
        );
        let cfg = SampleConfig::new(SampleMode::Ddim, 20, 0);
        let want = conditional_sample(&ckpt.model, &clf, &ckpt.schedule, &cfg, 1, 2.0, 2, 3).unwrap();
        assert_eq!(out, want.data());
        assert_eq!(
            tabdiff_sample_guided(m, c, &opts, 2, 1.0, 2, out.as_mut_ptr(), 6),
            TabdiffStatus::InvalidArgument
        );
        assert!(last_error().contains("label 2"), "{}", last_error());
        tabdiff_classifier_free(c);
        tabdiff_model_free(m);
    }
}

#[test]
fn errors_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(tabdiff_model_load(ptr::null(), &mut m), TabdiffStatus::NullPointer);
        let missing = cpath(&dir.path().join("missing.ckpt"));
        assert_eq!(tabdiff_model_load(missing.as_ptr(), &mut m), TabdiffStatus::Checkpoint);
        assert!(m.is_null());
        assert!(last_error().contains("missing.ckpt"));

        let (path, _) = write_model(dir.path(), FeatureKind::Continuous);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert_eq!(tabdiff_model_load(cpath(&path).as_ptr(), &mut m), TabdiffStatus::Checkpoint);
        assert!(last_error().contains("truncated"), "{}", last_error());

        std::fs::write(&path, &bytes).unwrap();
        let m = load(&path);
        assert!(tabdiff_last_error().is_null());
        let mut out = vec![0.0; 5];
        assert_eq!(tabdiff_sample(m, ptr::null(), 2, out.as_mut_ptr(), 5), TabdiffStatus::BufferTooSmall);
        assert_eq!(tabdiff_sample(ptr::null(), ptr::null(), 2, out.as_mut_ptr(), 6), TabdiffStatus::NullPointer);
        let mut opts = tabdiff_sample_options_default();
        opts.mode = 7;
        assert_eq!(tabdiff_sample(m, &opts, 1, out.as_mut_ptr(), 3), TabdiffStatus::InvalidArgument);
        opts.mode = TABDIFF_MODE_DDPM;
        assert_eq!(tabdiff_sample(m, &opts, 1, out.as_mut_ptr(), 3), TabdiffStatus::InvalidArgument);
        assert!(last_error().contains("DDIM"));
        opts.k = 0;
        opts.steps = 21;
        assert_eq!(tabdiff_sample(m, &opts, 1, out.as_mut_ptr(), 3), TabdiffStatus::InvalidArgument);
        tabdiff_model_free(m);
        tabdiff_model_free(ptr::null_mut());
        assert_eq!(tabdiff_model_feature_dim(ptr::null()), 0);
    }
}

#[test]
fn metrics_through_the_abi() {
    let real = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let synth = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let mut m = TabdiffMetrics::default();
    unsafe {
        assert_eq!(tabdiff_eval_binary(real.as_ptr(), 3, synth.as_ptr(), 2, 3, 0.5, &mut m), TabdiffStatus::Ok);
    }
    // real probs [1, 0, 2/3], synth [1/2, 0, 1]
    assert!((m.sae - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    assert!(m.rho.is_finite());

    let mut a = 0.0;
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    unsafe {
        assert_eq!(tabdiff_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut a), TabdiffStatus::Ok);
        assert_eq!(tabdiff_auc(scores.as_ptr(), ptr::null(), 4, &mut a), TabdiffStatus::NullPointer);
    }
    assert_eq!(a, 0.75);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(tabdiff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tabdiff.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "tabdiff_last_error",
        "tabdiff_version",
        "tabdiff_sample_options_default",
        "tabdiff_model_load",
        "tabdiff_model_free",
        "tabdiff_model_feature_dim",
        "tabdiff_model_steps",
        "tabdiff_classifier_load",
        "tabdiff_classifier_free",
        "tabdiff_sample",
        "tabdiff_sample_guided",
        "tabdiff_eval_binary",
        "tabdiff_auc",
        "TABDIFF_STATUS_BUFFER_TOO_SMALL",
        "typedef struct TabdiffModel TabdiffModel;",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "tabdiff.h"
int main(int argc, char **argv) {
    TabdiffModel *m = NULL;
    if (tabdiff_model_load("/nonexistent.ckpt", &m) != TABDIFF_STATUS_CHECKPOINT || m) return 2;
    if (!tabdiff_last_error()) return 3;
    if (tabdiff_model_load(argv[1], &m) != TABDIFF_STATUS_OK) return 4;
    size_t d = tabdiff_model_feature_dim(m);
    double out[6];
    TabdiffSampleOptions o = tabdiff_sample_options_default();
    o.seed = 5;
    if (tabdiff_sample(m, &o, 2, out, 2 * d) != TABDIFF_STATUS_OK) return 5;
    for (size_t i = 0; i < 2 * d; i++) printf("%.17g\n", out[i]);
    tabdiff_model_free(m);
    return argc == 2 ? 0 : 6;
}
"#;

/// Compile and run a C client against the static library when a C
/// compiler and the archive are available.
#[test]
fn c_client_links_and_runs() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libtabdiff_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (model, ckpt) = write_model(dir.path(), FeatureKind::Continuous);
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("client");
    let st = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success());
    let out = Command::new(&exe).arg(&model).output().unwrap();
    assert!(out.status.success(), "client exit {:?}", out.status);
    let got: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let cfg = SampleConfig::new(SampleMode::Ddim, 20, 5);
    let want = accelerated_sample(&ckpt.model, &ckpt.schedule, &cfg, 3, 2).unwrap().samples;
    assert_eq!(got, want.data());
}
