use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ionext_core::datahub::{
    generate_dataset, make_windows, Dataset, GroundTruthTrack, ImuSequence, ImuWindow, Split,
    SplitCounts, SyntheticSpec,
};
use ionext_core::nn::accounting::{REFERENCE_FLOPS, REFERENCE_PARAMS};
use ionext_core::nn::{
    count_parameters, estimate_flops, load_checkpoint, save_checkpoint, stage_lengths, IoNext,
    Mode, ModelConfig, Variant,
};
use ionext_core::train::{
    gradcheck as run_gradcheck, read_history, train as run_train, write_history, GradcheckOptions,
    TrainConfig, Trainer, HISTORY_FILE,
};
use ionext_core::trajeval::{check_rate, evaluate, write_report, EvalOptions, MetricReport};
use ionext_core::{Error, FeatureBatch};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{AblateArgs, EvalArgs, GenerateArgs, GradcheckArgs, InspectArgs, TrainArgs};

pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const ABLATION_FILE: &str = "ablation.csv";

type Sequences = Vec<(ImuSequence, GroundTruthTrack)>;

/// Preset name, ablation variant name, or path to a TOML file.
fn resolve_model_config(name: &str) -> Result<ModelConfig> {
    Ok(match name {
        "default" | "full" => ModelConfig::default(),
        "tiny" => ModelConfig::tiny(),
        "desk" => ModelConfig::desk(),
        other => match Variant::from_name(other) {
            Some(v) => v.config(),
            None => ModelConfig::load(Path::new(other))
                .with_context(|| format!("loading model config `{other}`"))?,
        },
    })
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

fn windows(data: &Sequences, window: f64, stride: f64) -> Result<Vec<ImuWindow>> {
    let mut out = Vec::new();
    for (s, g) in data {
        out.extend(
            make_windows(s, g, window, stride).with_context(|| format!("windowing {}", s.id))?,
        );
    }
    Ok(out)
}

fn common_rate<'a>(
    data: impl IntoIterator<Item = &'a (ImuSequence, GroundTruthTrack)>,
) -> Result<f64> {
    let mut rate = None;
    for (s, _) in data {
        match rate {
            None => rate = Some(s.sample_rate),
            Some(r) if r != s.sample_rate => bail!(
                "sequences have different sample rates: {r} Hz and {} Hz ({})",
                s.sample_rate,
                s.id
            ),
            _ => {}
        }
    }
    rate.context("dataset has no sequences")
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let manifest = RunManifest::start("generate");
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SyntheticSpec>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    spec.duration = a.duration;
    spec.sample_rate = a.rate;
    spec.rng_seed = a.seed;
    for (dst, src) in [
        (&mut spec.noise_std_gyro, a.noise_gyro),
        (&mut spec.noise_std_accel, a.noise_accel),
        (&mut spec.bias_std_gyro, a.bias_gyro),
        (&mut spec.bias_std_accel, a.bias_accel),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    ensure!(
        a.window > 0.0 && spec.duration > 2.0 * a.window,
        "duration {} s must exceed two windows of {} s",
        spec.duration,
        a.window
    );
    let counts = SplitCounts {
        train: a.num_train,
        val: a.num_val,
        test: a.num_test,
    };
    let rows = generate_dataset(&spec, counts, &a.out)?;
    println!("wrote {} sequences to {}", rows.len(), a.out.display());
    let mut m = manifest
        .config(json!({ "spec": spec, "counts": [a.num_train, a.num_val, a.num_test], "window_s": a.window }))
        .seed("dataset", spec.rng_seed);
    m.outputs.push(a.out.clone());
    m.finish(&a.out, format!("{} sequences", rows.len()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let manifest = RunManifest::start("train");
    let ds = open_dataset(&a.data)?;
    let mut tc = match &a.train_config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.initial_lr = v;
    }
    if let Some(v) = a.seed {
        tc.rng_seed = v;
    }
    tc.validate()?;
    let train_data = ds.load(Split::Train)?;
    let val_data = ds.load(Split::Val)?;
    ensure!(
        !train_data.is_empty(),
        "dataset {} has no training sequences",
        a.data.display()
    );
    ensure!(
        !val_data.is_empty(),
        "dataset {} has no validation sequences",
        a.data.display()
    );
    let rate = common_rate(train_data.iter().chain(&val_data))?;
    let tw = windows(&train_data, tc.window_seconds, tc.train_stride)?;
    let vw = windows(&val_data, tc.window_seconds, tc.val_stride)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let hist_path = a.out.join(HISTORY_FILE);
    let (mut trainer, mut history) = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if let Some(r) = ckpt.meta.sample_rate_hz {
                ensure!(
                    r == rate,
                    "checkpoint trained at {r} Hz, data is at {rate} Hz"
                );
            }
            let previous = if hist_path.exists() {
                read_history(&hist_path)?
                    .into_iter()
                    .filter(|r| r.epoch <= ckpt.meta.epoch)
                    .collect()
            } else {
                Vec::new()
            };
            (Trainer::resume(&ckpt, tc.clone())?, previous)
        }
        None => {
            let mc = resolve_model_config(&a.model_config)?;
            (
                Trainer::new(IoNext::new(mc, tc.rng_seed)?, tc.clone())?,
                Vec::new(),
            )
        }
    };
    trainer.set_sample_rate(rate);
    eprintln!(
        "training {} parameters on {} windows ({} validation), starting at epoch {}",
        trainer.model().params().trainable_count(),
        tw.len(),
        vw.len(),
        trainer.epoch() + 1
    );

    let (best_path, last_path) = (a.out.join(BEST_CKPT), a.out.join(LAST_CKPT));
    fs::write(
        a.out.join("model.toml"),
        trainer.model().config().to_toml_string(),
    )?;
    fs::write(a.out.join("train.toml"), tc.to_toml_string())?;
    let result = trainer.fit(&tw, &vw, |rec, t| {
        history.push(rec.clone());
        write_history(&hist_path, &history)?;
        if let Some(best) = t.best_checkpoint().filter(|b| b.meta.epoch == rec.epoch) {
            save_checkpoint(best, &best_path)?;
        }
        save_checkpoint(&t.checkpoint(), &last_path)?;
        eprintln!(
            "epoch {:>4}  train_mse {:.6e}  val_mse {:.6e}  lr {:.1e}",
            rec.epoch, rec.train_mse, rec.val_mse, rec.lr
        );
        Ok(())
    });
    let mut m = manifest
        .config(json!({
            "model": trainer.model().config(),
            "train": tc,
            "resume": a.resume,
        }))
        .seed("train", tc.rng_seed);
    m.inputs.push(a.data.clone());
    m.outputs.extend([best_path.clone(), last_path, hist_path]);
    match result {
        Ok(stop) => {
            println!("stop: {stop}");
            if let Some(best) = trainer.best_checkpoint() {
                println!(
                    "best val_mse {:.6e} at epoch {} -> {}",
                    best.meta.best_val_loss.unwrap_or(f64::NAN),
                    best.meta.epoch,
                    best_path.display()
                );
            }
            m.finish(&a.out, stop.to_string())
        }
        Err(Error::NonFinite { epoch, batch }) => {
            println!("stop: nan_abort");
            m.finish(&a.out, "nan_abort")?;
            bail!("non-finite loss at epoch {epoch}, batch {batch}")
        }
        Err(e) => Err(e.into()),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let manifest = RunManifest::start("eval");
    let ckpt = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let model = ckpt.model::<f32>()?;
    let data = open_dataset(&a.data)?.load(a.split)?;
    ensure!(
        !data.is_empty(),
        "split {} of {} is empty",
        a.split,
        a.data.display()
    );
    for (s, _) in &data {
        check_rate(&ckpt, s)?;
    }
    let opts = EvalOptions {
        window_seconds: ckpt.meta.window_seconds.unwrap_or(1.0),
        stride: a.stride,
        horizon: a.horizon,
    };
    let report = evaluate(&model, &data, &opts)?;
    write_report(&a.report_dir, &report)?;
    print_report(&report);
    let mut m = manifest.config(json!({ "split": a.split.as_str(), "eval": opts }));
    m.inputs.extend([a.data.clone(), a.ckpt.clone()]);
    m.outputs.push(a.report_dir.clone());
    m.finish(&a.report_dir, format!("{} sequences", report.rows.len()))
}

fn print_report(r: &MetricReport) {
    println!(
        "sequences {}  horizon_s {}  stride_s {}",
        r.rows.len(),
        r.options.horizon,
        r.options.stride
    );
    for (k, v) in r.aggregates() {
        println!("{k} {v:.6}");
    }
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let manifest = RunManifest::start("inspect");
    let cfg = resolve_model_config(&a.model_config)?;
    cfg.validate()?;
    let lens = stage_lengths(&cfg, a.len)?;
    let analytic = count_parameters(&cfg)?;
    let flops = estimate_flops(&cfg, a.len)?;
    let model = IoNext::<f32>::new(cfg.clone(), 0)?;
    let runtime = model.params().trainable_count();
    let x = FeatureBatch::<f32>::zeros(6, 1, a.len);
    let (y, tape) = model.forward_with(&x, Mode::Eval)?;

    let mut s = String::new();
    let w = cfg.stage_widths;
    writeln!(
        s,
        "config: stem={} widths={:?} depths={:?} norm={} stgu={}",
        cfg.stem_kind,
        w,
        cfg.stage_depths,
        cfg.norm_kind,
        if cfg.stgu_enabled {
            format!("on ({} gating)", cfg.stgu_gating_axis)
        } else {
            "off".into()
        }
    )?;
    writeln!(s, "input: 6x{}", a.len)?;
    writeln!(s, "stem: {}x{}", w[0], lens[0])?;
    for (i, &(c, t)) in tape.shapes()[1..].iter().enumerate() {
        ensure!(
            c == w[i] && t == lens[i + 1],
            "runtime shape of stage {} disagrees with stride arithmetic",
            i + 1
        );
        writeln!(s, "stage{}: {c}x{t}", i + 1)?;
    }
    writeln!(s, "head: {}", y.len())?;
    writeln!(s, "params (analytic): {analytic}")?;
    writeln!(s, "params (runtime):  {runtime}")?;
    writeln!(s, "MACs: {} ({:.2e})", flops.macs, flops.macs as f64)?;
    writeln!(
        s,
        "FLOPs (2 per MAC): {} ({:.2e})",
        flops.flops, flops.flops as f64
    )?;
    writeln!(
        s,
        "published reference: params {REFERENCE_PARAMS:.1e}, FLOPs {REFERENCE_FLOPS:.1e}"
    )?;
    writeln!(
        s,
        "caveat: counts follow the layer equations literally (no channel expansion inside the gating unit); \
         the published parameter figure likely includes components that are not described, so the two are not expected to agree"
    )?;
    ensure!(
        analytic == runtime,
        "analytic count {analytic} differs from runtime tally {runtime}"
    );
    print!("{s}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("inspect.txt"), &s)?;
        let mut m = manifest.config(json!({ "model": cfg, "len": a.len }));
        m.outputs.push(out.join("inspect.txt"));
        m.finish(out, "ok")?;
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let manifest = RunManifest::start("ablate");
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|n| Variant::from_name(n).with_context(|| format!("unknown variant `{n}`")))
            .collect::<Result<_>>()?
    };
    let ds = open_dataset(&a.data)?;
    let tc = TrainConfig {
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        initial_lr: a.lr,
        lr_floor: a.lr * 1e-3,
        rng_seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let train_data = ds.load(Split::Train)?;
    let val_data = ds.load(Split::Val)?;
    let mut eval_data = ds.load(Split::Test)?;
    if eval_data.is_empty() {
        eval_data = val_data.clone();
    }
    ensure!(
        !train_data.is_empty() && !val_data.is_empty(),
        "dataset {} needs train and val sequences",
        a.data.display()
    );
    let tw = windows(&train_data, tc.window_seconds, tc.train_stride)?;
    let vw = windows(&val_data, tc.window_seconds, tc.val_stride)?;
    let opts = EvalOptions::default();

    println!(
        "budget: {} epochs per variant on {} windows; smoke-scale numbers, not comparable to full-dataset benchmarks",
        a.epochs,
        tw.len()
    );
    fs::create_dir_all(&a.out)?;
    let path = a.out.join(ABLATION_FILE);
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "variant",
        "stem_kind",
        "norm_kind",
        "widths",
        "depths",
        "stgu",
        "params",
        "final_val_mse",
        "ate_norm",
        "rte_norm",
        "ale_norm",
    ])?;
    for v in variants {
        let cfg = v.config();
        let params = count_parameters(&cfg)?;
        let outcome = run_train(IoNext::new(cfg.clone(), a.seed)?, &tw, &vw, &tc)
            .with_context(|| format!("training variant {}", v.name()))?;
        let final_val = outcome.history.last().map_or(f64::NAN, |r| r.val_mse);
        let report = evaluate(&outcome.best.model::<f32>()?, &eval_data, &opts)?;
        let join = |x: [usize; 4]| x.map(|v| v.to_string()).join("/");
        w.write_record([
            v.name().to_owned(),
            cfg.stem_kind.to_string(),
            cfg.norm_kind.to_string(),
            join(cfg.stage_widths),
            join(cfg.stage_depths),
            cfg.stgu_enabled.to_string(),
            params.to_string(),
            final_val.to_string(),
            report.ate_norm.to_string(),
            report.rte_norm.to_string(),
            report.ale_norm.to_string(),
        ])?;
        w.flush()?;
        println!(
            "{:<14} params {:>10}  val_mse {:.4e}  ate_norm {:.4}  rte_norm {:.4}  ale_norm {:.4}",
            v.name(),
            params,
            final_val,
            report.ate_norm,
            report.rte_norm,
            report.ale_norm
        );
    }
    let mut m = manifest
        .config(json!({ "train": tc, "eval": opts }))
        .seed("train", a.seed);
    m.inputs.push(a.data.clone());
    m.outputs.push(path);
    m.finish(&a.out, "ok")
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let manifest = RunManifest::start("gradcheck");
    let cfg = ModelConfig {
        stgu_enabled: !a.no_stgu,
        stgu_gating_axis: a.gating_axis,
        ..ModelConfig::tiny()
    };
    let mut opts = GradcheckOptions::new(cfg.clone());
    opts.tolerance = a.tolerance;
    opts.seed = a.seed;
    opts.batch = a.batch;
    opts.sampled = a.sampled;
    let report = run_gradcheck(&opts)?;
    println!(
        "checked {} parameters (h = {:e})",
        report.entries.len(),
        opts.step
    );
    if let Some(e) = report.worst() {
        println!(
            "max relative error: {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            e.rel_error, e.name, e.offset, e.analytic, e.numeric
        );
    }
    let verdict = if report.passed { "pass" } else { "fail" };
    println!("gradcheck: {verdict} (tolerance {:e})", report.tolerance);
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let path = out.join("gradcheck.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["name", "offset", "analytic", "numeric", "rel_error"])?;
        for e in &report.entries {
            w.write_record([
                e.name.clone(),
                e.offset.to_string(),
                e.analytic.to_string(),
                e.numeric.to_string(),
                e.rel_error.to_string(),
            ])?;
        }
        w.flush()?;
        let mut m = manifest
            .config(
                json!({ "model": cfg, "batch": opts.batch, "len": opts.len, "step": opts.step,
                "sampled": opts.sampled, "tolerance": opts.tolerance }),
            )
            .seed("gradcheck", a.seed);
        m.outputs.push(path);
        m.finish(out, verdict)?;
    }
    ensure!(
        report.passed,
        "max relative error {:.3e} exceeds tolerance {:e}",
        report.max_rel_error,
        report.tolerance
    );
    Ok(())
}
