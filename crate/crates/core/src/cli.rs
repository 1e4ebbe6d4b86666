//! Command-line front end. Every run is a pure function of argv, the
//! config file and the seed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::anderson::accelerated_sample;
use crate::checkpoint::{ClassifierCheckpoint, DenoiserCheckpoint, TrainMeta};
use crate::config::{describe_keys, Config};
use crate::data::{load_csv, write_csv, Dataset, FeatureKind};
use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::guidance::{conditional_sample_report, conditional_sample, train_classifier};
use crate::metrics::{augmentation_csv, augmentation_curve, bernoulli_round, binarize, eval_binary, kde_csv, LogisticConfig};
use crate::sampler::{reconstruct, sample, SampleMode};
use crate::tensor::Tensor;
use crate::trainer::train_with;

#[derive(Debug, Parser)]
#[command(name = "tabdiff", version, about = "Diffusion models for tabular records")]
#[command(after_help = describe_keys())]
struct Cli {
    /// Config file of key=value lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when omitted, except for checkpoints)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataFlags {
    /// binary | continuous
    #[arg(long)]
    kind: Option<String>,
    /// Final column holds integer labels
    #[arg(long)]
    labeled: bool,
    /// Files start with a header row
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct SampleFlags {
    /// ddpm | ddim
    #[arg(long)]
    mode: Option<String>,
    /// Anderson table size, 0 disables (ddim only)
    #[arg(long)]
    k: Option<usize>,
    /// Reverse steps to take (strided when below the schedule length)
    #[arg(long = "T", value_name = "STEPS")]
    steps: Option<usize>,
    /// Deterministic ddpm updates
    #[arg(long)]
    sigma_zero: bool,
    /// Condition on this label (needs --classifier)
    #[arg(long, value_name = "LABEL")]
    guided: Option<usize>,
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
    /// Guidance multiplier
    #[arg(long)]
    scale: Option<f64>,
    /// Write per-step mean residuals here
    #[arg(long, value_name = "FILE")]
    trajectory: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a denoiser and write a checkpoint (default model.ckpt)
    Train {
        data: PathBuf,
        #[command(flatten)]
        flags: DataFlags,
        /// Write the loss history CSV here
        #[arg(long, value_name = "FILE")]
        loss: Option<PathBuf>,
    },
    /// Generate records from a checkpoint
    Sample {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Number of records
        #[arg(short = 'n', long)]
        samples: Option<usize>,
        /// Keep continuous outputs for binary models
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        sampling: SampleFlags,
    },
    /// Noise records to the last step and denoise them back
    Reconstruct {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        labeled: bool,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fit a guidance classifier on labeled records (default classifier.ckpt)
    ClassifyTrain {
        /// Denoiser checkpoint whose schedule and scaling are reused
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        header: bool,
    },
    /// Compare real and synthetic records
    Evaluate {
        real: PathBuf,
        synth: PathBuf,
        #[command(flatten)]
        flags: DataFlags,
        /// KDE grid points (continuous data)
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Round synthetic values by Bernoulli draws (seeded by --seed)
        /// instead of thresholding; pair with `sample --raw`
        #[arg(long)]
        bernoulli: bool,
    },
    /// Test AUC as guided synthetic records are added to real training data
    Augment {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        classifier: PathBuf,
        train: PathBuf,
        test: PathBuf,
        #[arg(long)]
        header: bool,
        /// Synthetic records added per point
        #[arg(long)]
        step: Option<usize>,
        /// Total synthetic records
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        scale: Option<f64>,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Train { data, flags, loss } => {
            apply_data_flags(&mut cfg, &flags)?;
            cfg.validate()?;
            cmd_train(&cfg, &data, loss.as_deref(), out.unwrap_or(Path::new("model.ckpt")))
        }
        Command::Sample { model, samples, raw, sampling } => {
            if let Some(n) = samples {
                cfg.samples = n;
            }
            let explicit_k = sampling.k.is_some();
            apply_sample_flags(&mut cfg, &sampling)?;
            cfg.validate()?;
            cmd_sample(&cfg, &model, &sampling, explicit_k, raw, out)
        }
        Command::Reconstruct { model, data, header, labeled, mode } => {
            cfg.header |= header;
            cfg.set("mode", mode.as_deref().unwrap_or("ddpm"))?;
            cfg.validate()?;
            cmd_reconstruct(&cfg, &model, &data, labeled, out)
        }
        Command::ClassifyTrain { model, data, header } => {
            cfg.header |= header;
            cfg.validate()?;
            cmd_classify_train(&cfg, &model, &data, out.unwrap_or(Path::new("classifier.ckpt")))
        }
        Command::Evaluate { real, synth, flags, points, bernoulli } => {
            apply_data_flags(&mut cfg, &flags)?;
            cfg.validate()?;
            cmd_evaluate(&cfg, &real, &synth, points, bernoulli, out)
        }
        Command::Augment { model, classifier, train, test, header, step, pool, k, scale } => {
            cfg.header |= header;
            cfg.aug_step = step.unwrap_or(cfg.aug_step);
            cfg.aug_pool = pool.unwrap_or(cfg.aug_pool);
            cfg.k = k.unwrap_or(cfg.k);
            cfg.guidance_scale = scale.unwrap_or(cfg.guidance_scale);
            cfg.validate()?;
            cmd_augment(&cfg, &model, &classifier, (&train, &test), out)
        }
    }
}

fn apply_data_flags(cfg: &mut Config, f: &DataFlags) -> Result<()> {
    if let Some(k) = &f.kind {
        cfg.set("kind", k)?;
    }
    cfg.labeled |= f.labeled;
    cfg.header |= f.header;
    Ok(())
}

fn apply_sample_flags(cfg: &mut Config, f: &SampleFlags) -> Result<()> {
    if let Some(m) = &f.mode {
        cfg.set("mode", m)?;
    }
    if let Some(k) = f.k {
        cfg.k = k;
    }
    if f.sigma_zero {
        cfg.set("sigma", "zero")?;
    }
    if let Some(s) = f.scale {
        cfg.guidance_scale = s;
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_table(out: Option<&Path>, x: &Tensor, names: Option<&[String]>, labels: Option<&[usize]>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, x, names, labels)?;
    emit(out, &String::from_utf8_lossy(&buf))
}

fn cmd_train(cfg: &Config, data: &Path, loss: Option<&Path>, out: &Path) -> Result<()> {
    let ds = load_csv(data, cfg.kind, cfg.labeled, cfg.header)?;
    let sched = cfg.schedule()?;
    let mut model = DenoiserModel::new(cfg.denoiser_config(ds.dim()), cfg.seed)?;
    let wrap = |model: DenoiserModel, steps: usize, loss: f64| DenoiserCheckpoint {
        model,
        schedule: sched.clone(),
        meta: TrainMeta { steps, seed: cfg.seed, loss },
        kind: ds.kind,
        standardizer: ds.standardizer.clone(),
        names: ds.names.clone(),
    };
    let report = train_with(&mut model, &sched, &ds.features, &cfg.train_config(), |step, loss, m| {
        if cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 {
            let mut p = out.as_os_str().to_owned();
            p.push(format!(".step{step}"));
            wrap(m.clone(), step, loss).save(Path::new(&p))?;
        }
        Ok(())
    })?;
    if let Some(p) = loss {
        std::fs::write(p, report.to_csv())?;
    }
    let final_loss = report.final_loss().unwrap_or(f64::NAN);
    wrap(model, report.history.len(), final_loss).save(out)?;
    eprintln!("trained {} steps, final loss {final_loss:.6}", report.history.len());
    Ok(())
}

fn to_records(ckpt: &DenoiserCheckpoint, cfg: &Config, x: &Tensor, raw: bool) -> Result<Tensor> {
    let x = match &ckpt.standardizer {
        Some(s) => s.inverse(x)?,
        None => x.clone(),
    };
    if ckpt.kind == FeatureKind::Binary && !raw {
        Ok(binarize(&x, cfg.threshold)?.to_tensor())
    } else {
        Ok(x)
    }
}

fn header_names<'a>(cfg: &Config, ckpt: &'a DenoiserCheckpoint) -> Option<&'a [String]> {
    cfg.header.then_some(ckpt.names.as_slice())
}

fn cmd_sample(
    cfg: &Config,
    model_path: &Path,
    f: &SampleFlags,
    explicit_k: bool,
    raw: bool,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = DenoiserCheckpoint::load(model_path)?;
    let sched = &ckpt.schedule;
    let mut scfg = cfg.sample_config(Some(f.steps.unwrap_or(sched.steps())));
    let k = match cfg.mode {
        SampleMode::Ddim => cfg.k,
        SampleMode::Ddpm if explicit_k && cfg.k > 0 => {
            return Err(Error::Config("--k > 0 needs --mode ddim".into()));
        }
        SampleMode::Ddpm => 0,
    };
    let n = cfg.samples;
    let (x, labels, residuals) = match f.guided {
        Some(y) => {
            let path = f
                .classifier
                .as_ref()
                .ok_or_else(|| Error::Config("--guided needs --classifier".into()))?;
            let clf = load_classifier(path, &ckpt)?;
            if cfg.mode == SampleMode::Ddim {
                let o = conditional_sample_report(&ckpt.model, &clf, sched, &scfg, y, cfg.guidance_scale, n, k)?;
                (o.samples, Some(vec![y; n]), Some(o.report.residual_csv()))
            } else {
                let x = conditional_sample(&ckpt.model, &clf, sched, &scfg, y, cfg.guidance_scale, n, 0)?;
                (x, Some(vec![y; n]), None)
            }
        }
        None if cfg.mode == SampleMode::Ddim && k > 0 => {
            let o = accelerated_sample(&ckpt.model, sched, &scfg, k, n)?;
            (o.samples, None, Some(o.report.residual_csv()))
        }
        None => {
            scfg.record_trajectory = f.trajectory.is_some();
            let o = sample(&ckpt.model, sched, &scfg, n)?;
            (o.samples, None, o.trajectory.map(|t| t.to_csv()))
        }
    };
    if let Some(p) = &f.trajectory {
        let text = residuals.ok_or_else(|| Error::Config("--trajectory is not recorded for guided ddpm sampling".into()))?;
        std::fs::write(p, text)?;
    }
    let records = to_records(&ckpt, cfg, &x, raw)?;
    emit_table(out, &records, header_names(cfg, &ckpt), labels.as_deref())
}

fn load_classifier(path: &Path, ckpt: &DenoiserCheckpoint) -> Result<crate::guidance::GuidanceClassifier> {
    let c = ClassifierCheckpoint::load(path)?;
    if c.schedule != ckpt.schedule {
        return Err(Error::Config("classifier and denoiser were trained with different schedules".into()));
    }
    if c.classifier.feature_dim() != ckpt.model.config().feature_dim {
        return Err(Error::Dimension("classifier and denoiser feature widths differ".into()));
    }
    Ok(c.classifier)
}

/// Records in the checkpoint's model space.
fn model_space(ckpt: &DenoiserCheckpoint, ds: &Dataset) -> Result<Tensor> {
    if ds.dim() != ckpt.model.config().feature_dim {
        return Err(Error::Dimension(format!(
            "data has {} features, model expects {}",
            ds.dim(),
            ckpt.model.config().feature_dim
        )));
    }
    let raw = ds.raw_features()?;
    match &ckpt.standardizer {
        Some(s) => s.transform(&raw),
        None => Ok(raw),
    }
}

fn cmd_reconstruct(cfg: &Config, model_path: &Path, data: &Path, labeled: bool, out: Option<&Path>) -> Result<()> {
    let ckpt = DenoiserCheckpoint::load(model_path)?;
    let ds = load_csv(data, ckpt.kind, labeled, cfg.header)?;
    let x0 = model_space(&ckpt, &ds)?;
    let scfg = cfg.sample_config(Some(ckpt.schedule.steps()));
    let x = reconstruct(&ckpt.model, &ckpt.schedule, &x0, &scfg)?;
    let x = match &ckpt.standardizer {
        Some(s) => s.inverse(&x)?,
        None => x,
    };
    emit_table(out, &x, header_names(cfg, &ckpt), None)
}

fn cmd_classify_train(cfg: &Config, model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let ckpt = DenoiserCheckpoint::load(model_path)?;
    let ds = load_csv(data, ckpt.kind, true, cfg.header)?;
    let x = model_space(&ckpt, &ds)?;
    let labels = ds.labels.as_deref().unwrap_or_default();
    let (classifier, report) = train_classifier(&x, labels, &ckpt.schedule, &cfg.classifier_config())?;
    ClassifierCheckpoint {
        classifier,
        schedule: ckpt.schedule.clone(),
    }
    .save(out)?;
    eprintln!(
        "trained classifier {} steps, final loss {:.6}",
        report.history.len(),
        report.final_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_evaluate(cfg: &Config, real: &Path, synth: &Path, points: usize, bernoulli: bool, out: Option<&Path>) -> Result<()> {
    let r = load_csv(real, cfg.kind, cfg.labeled, cfg.header)?.raw_features()?;
    let s = load_csv(synth, FeatureKind::Continuous, cfg.labeled, cfg.header)?.raw_features()?;
    if r.shape()[1] != s.shape()[1] {
        return Err(Error::Dimension(format!(
            "real has {} features, synthetic has {}",
            r.shape()[1],
            s.shape()[1]
        )));
    }
    match cfg.kind {
        FeatureKind::Binary => {
            let sb = if bernoulli {
                bernoulli_round(&s, cfg.seed)?
            } else {
                binarize(&s, cfg.threshold)?
            };
            let report = eval_binary(&binarize(&r, cfg.threshold)?, &sb)?;
            eprintln!("{}", report.summary());
            emit(out, &report.to_csv())
        }
        FeatureKind::Continuous => emit(out, &kde_csv(&r, &s, points)?),
    }
}

fn cmd_augment(cfg: &Config, model_path: &Path, clf_path: &Path, files: (&Path, &Path), out: Option<&Path>) -> Result<()> {
    let ckpt = DenoiserCheckpoint::load(model_path)?;
    let clf = load_classifier(clf_path, &ckpt)?;
    let train_ds = load_csv(files.0, ckpt.kind, true, cfg.header)?;
    let test_ds = load_csv(files.1, ckpt.kind, true, cfg.header)?;
    let classes = clf.num_classes();
    let n = cfg.aug_pool;
    // Equal share per class, interleaved so every prefix stays balanced.
    let mut per_class = Vec::with_capacity(classes);
    for y in 0..classes {
        let m = n / classes + usize::from(y < n % classes);
        if m == 0 {
            per_class.push(None);
            continue;
        }
        let mut scfg = cfg.sample_config(Some(ckpt.schedule.steps()));
        scfg.mode = SampleMode::Ddim;
        scfg.seed = cfg.seed.wrapping_add(y as u64);
        let x = conditional_sample(&ckpt.model, &clf, &ckpt.schedule, &scfg, y, cfg.guidance_scale, m, cfg.k)?;
        per_class.push(Some(to_records(&ckpt, cfg, &x, false)?));
    }
    let d = train_ds.dim();
    let (mut data, mut labels) = (Vec::with_capacity(n * d), Vec::with_capacity(n));
    for i in 0..n.div_ceil(classes.max(1)) {
        for (y, x) in per_class.iter().enumerate() {
            if let Some(x) = x {
                if i < x.shape()[0] {
                    data.extend_from_slice(x.row(i));
                    labels.push(y);
                }
            }
        }
    }
    let pool = Tensor::new(vec![labels.len(), d], data)?;
    let xr = train_ds.raw_features()?;
    let xt = test_ds.raw_features()?;
    let yr = train_ds.labels.as_deref().unwrap_or_default();
    let yt = test_ds.labels.as_deref().unwrap_or_default();
    let curve = augmentation_curve((&xr, yr), (&pool, &labels), (&xt, yt), cfg.aug_step, &LogisticConfig::default())?;
    emit(out, &augmentation_csv(&curve))
}
