//! Acceptance suite: prints one `criterion N: PASS|FAIL` line per criterion,
//! then fails if any criterion failed.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ionext_core::datahub::{make_windows, synthesize, ImuWindow, SyntheticSpec};
use ionext_core::nn::ops::ForwardCtx;
use ionext_core::nn::*;
use ionext_core::train::*;
use ionext_core::trajeval::*;
use ionext_core::FeatureBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ionext"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn shape_pipeline() -> Outcome {
    let m = IoNext::<f32>::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let x = FeatureBatch::<f32>::zeros(6, 1, 200);
    let t = Instant::now();
    let (y, tape) = m.forward_with(&x, Mode::Eval).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let want = [(96, 50), (192, 25), (384, 12), (768, 6)];
    check!(
        tape.shapes()[1..] == want,
        "stage shapes {:?}",
        tape.shapes()
    );
    check!(y.len() == 2, "output has {} values", y.len());
    check!(elapsed < Duration::from_secs(1), "forward took {elapsed:?}");
    Ok(format!(
        "96x50 / 192x25 / 384x12 / 768x6 -> 2 in {elapsed:.2?}"
    ))
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let variants = [
        ("default", ModelConfig::tiny()),
        (
            "channel",
            ModelConfig {
                stgu_gating_axis: GatingAxis::Channel,
                ..ModelConfig::tiny()
            },
        ),
        (
            "wo_stgu",
            ModelConfig {
                stgu_enabled: false,
                ..ModelConfig::tiny()
            },
        ),
    ];
    for (name, cfg) in variants {
        let opts = GradcheckOptions::new(cfg);
        check!(opts.sampled >= 200, "only {} sampled", opts.sampled);
        let r = gradcheck(&opts).map_err(|e| e.to_string())?;
        let covered = r
            .entries
            .iter()
            .filter(|e| e.name.starts_with("stage1.block1."))
            .count();
        check!(covered > 0, "{name}: first block not covered");
        check!(
            r.passed && r.max_rel_error < 1e-4,
            "{name}: max rel error {:e}",
            r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
    }
    let elapsed = t.elapsed();
    check!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "3 variants, max rel error {worst:.2e}, {elapsed:.1?}"
    ))
}

fn layer_oracles() -> Outcome {
    let (mix, gate) = oracle_sweep(100, 20);
    check!(mix < 1e-5 && gate < 1e-5, "mixer {mix:e}, gating {gate:e}");
    Ok(format!("20 instances, mixer {mix:.1e}, gating {gate:.1e}"))
}

fn softmax_and_gate_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum = 0.0f64;
    for axis in [GatingAxis::Time, GatingAxis::Channel] {
        let cfg = ModelConfig {
            stgu_gating_axis: axis,
            ..ModelConfig::tiny()
        };
        let mut m = IoNext::<f64>::new(cfg, 1).unwrap();
        randomize(&mut m, &mut rng);
        let x = random_batch(&mut rng, 6, 3, 64);
        let (_, tape) = m.forward_with(&x, Mode::Train).map_err(|e| e.to_string())?;
        for st in 0..4 {
            let b = tape.block(st, 0);
            for j in 0..2 {
                let w = b.dadm().fusion_weights(j);
                let h = w.len() / 9;
                for n in 0..3 {
                    for c in 0..h {
                        let col: Vec<f64> = (0..3).map(|i| w[(n * 3 + i) * h + c]).collect();
                        check!(col.iter().all(|&v| v >= 0.0), "negative fusion weight");
                        worst_sum = worst_sum.max((col.iter().sum::<f64>() - 1.0).abs());
                    }
                }
            }
            let gates = b.stgu().unwrap().gates();
            check!(
                gates.iter().all(|&g| g > 0.0 && g < 1.0),
                "gate outside (0,1)"
            );
        }
        // Residual identity with zeroed output projections.
        for name in [
            "dadm.w2.weight",
            "dadm.w2.bias",
            "stgu.value.weight",
            "stgu.value.bias",
        ] {
            let p = m
                .params_mut()
                .get_mut(&format!("stage1.block1.{name}"))
                .unwrap();
            p.tensor.data_mut().fill(0.0);
        }
        let xb = random_batch(&mut rng, 4, 2, 20);
        let (y, _) = m
            .block(0, 0)
            .forward(m.params(), &xb, &mut ForwardCtx::new(Mode::Train))
            .map_err(|e| e.to_string())?;
        let dev = y
            .data()
            .iter()
            .zip(xb.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        check!(dev <= 1e-7, "identity deviates by {dev:e}");
    }
    check!(worst_sum <= 1e-6, "fusion weights sum off by {worst_sum:e}");
    Ok(format!(
        "fusion sum error {worst_sum:.1e}, gates in (0,1), identity exact"
    ))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n = if case % 2 == 0 { 31 } else { 121 };
        let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let g = random_walk(&mut rng, n);
        let p = random_walk(&mut rng, n);
        let pe = TrajectoryEstimate {
            timestamps: ts.clone(),
            positions: p.clone(),
        };
        let gt = ionext_core::datahub::GroundTruthTrack {
            timestamps: ts,
            positions: g.clone(),
            velocities: None,
        };
        let got = [ate(&pe, &gt), rte(&pe, &gt, 60.0), ale(&pe, &gt)];
        let want = [
            brute_ate(&p, &g),
            brute_rte(&p, &g, 1.0, 60.0),
            brute_ale(&p, &g),
        ];
        for (a, b) in got.into_iter().zip(want) {
            let a = a.map_err(|e| e.to_string())?;
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
    }
    check!(worst <= 1e-9, "metric deviates by {worst:e}");
    let hand = normalize(&[1.0, 3.0], &[10.0, 30.0]).unwrap();
    check!((hand - 0.1).abs() < 1e-15, "hand case gave {hand}");
    let mut worst_form = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(1..20);
        let m: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..10.0)).collect();
        let l: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..100.0)).collect();
        let total: f64 = l.iter().sum();
        let weighted: f64 = (0..k).map(|i| (l[i] / total) * (m[i] / l[i])).sum();
        let simple = normalize(&m, &l).unwrap();
        worst_form = worst_form.max((weighted - simple).abs() / simple.max(1e-300));
    }
    check!(
        worst_form <= 1e-12,
        "normalization forms differ by {worst_form:e}"
    );
    Ok(format!(
        "brute force {worst:.1e}, forms {worst_form:.1e}, hand case 0.1"
    ))
}

fn shortening_property() -> Outcome {
    let oracle = |w: &ImuWindow| w.label;
    let opts = EvalOptions::default();
    let curved: Vec<_> = (0..5)
        .map(|i| {
            synthesize(&SyntheticSpec {
                duration: 60.0,
                rng_seed: 300 + i,
                ..Default::default()
            })
            .unwrap()
        })
        .collect();
    let report = evaluate(&oracle, &curved, &opts).map_err(|e| e.to_string())?;
    for r in &report.rows {
        check!(
            r.length_pred < r.length_gt,
            "{}: L_pred {} >= L {}",
            r.id,
            r.length_pred,
            r.length_gt
        );
    }
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let (seq, gt) = piecewise_linear("pl", 30, 200.0, seed);
        let r = evaluate_sequence(&oracle, &seq, &gt, &opts).map_err(|e| e.to_string())?;
        worst = worst.max((r.length_pred - r.length_gt).abs());
    }
    check!(worst < 1e-9, "piecewise-linear length gap {worst:e}");
    Ok(format!(
        "L_pred < L on 5 curved tracks, piecewise-linear gap {worst:.1e}"
    ))
}

fn overfit_drill() -> Outcome {
    let spec = SyntheticSpec {
        duration: 30.0,
        rng_seed: 7,
        ..Default::default()
    };
    let (seq, gt) = synthesize(&spec).unwrap();
    let w: Vec<ImuWindow> = make_windows(&seq, &gt, 1.0, 0.25)
        .unwrap()
        .into_iter()
        .take(64)
        .collect();
    let refs: Vec<&ImuWindow> = w.iter().collect();
    let cfg = TrainConfig {
        batch_size: 64,
        initial_lr: 1e-3,
        ..Default::default()
    };
    let mut t = Trainer::new(IoNext::new(ModelConfig::tiny(), 0).unwrap(), cfg)
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    for step in 1..=2000 {
        t.step(&refs, 0).map_err(|e| e.to_string())?;
        if step % 100 == 0 {
            let mse = mse_on(t.model(), &w, 64).map_err(|e| e.to_string())?;
            if mse < 1e-3 {
                let el = start.elapsed();
                check!(el < Duration::from_secs(300), "took {el:?}");
                return Ok(format!("train MSE {mse:.2e} after {step} steps, {el:.1?}"));
            }
        }
    }
    Err("train MSE still >= 1e-3 after 2000 steps".into())
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let gen = |seed: u64| {
        synthesize(&SyntheticSpec {
            duration: 60.0,
            rng_seed: seed,
            ..Default::default()
        })
        .unwrap()
    };
    let train_seqs: Vec<_> = (0..40).map(|i| gen(1000 + i)).collect();
    let val_seqs: Vec<_> = (0..4).map(|i| gen(2000 + i)).collect();
    let test_seqs: Vec<_> = (0..5).map(|i| gen(3000 + i)).collect();
    let cfg = TrainConfig {
        max_epochs: 6,
        initial_lr: 1e-3,
        lr_floor: 1e-6,
        plateau_patience: 2,
        train_stride: 0.5,
        ..Default::default()
    };
    let win = |data: &[(
        ionext_core::datahub::ImuSequence,
        ionext_core::datahub::GroundTruthTrack,
    )],
               stride| {
        data.iter()
            .flat_map(|(s, g)| make_windows(s, g, 1.0, stride).unwrap())
            .collect::<Vec<_>>()
    };
    let (tw, vw) = (
        win(&train_seqs, cfg.train_stride),
        win(&val_seqs, cfg.val_stride),
    );
    let model = IoNext::<f32>::new(ModelConfig::desk(), 0).unwrap();
    let opts = EvalOptions::default();
    let before = evaluate(&model, &test_seqs, &opts)
        .map_err(|e| e.to_string())?
        .ate_norm;
    let out = train(model, &tw, &vw, &cfg).map_err(|e| e.to_string())?;
    let best = out.best.model::<f32>().map_err(|e| e.to_string())?;
    let after = evaluate(&best, &test_seqs, &opts)
        .map_err(|e| e.to_string())?
        .ate_norm;
    let el = start.elapsed();
    check!(
        after < 0.5 * before,
        "ate_norm {after:.4} vs random init {before:.4}"
    );
    check!(el < Duration::from_secs(1800), "took {el:?}");
    Ok(format!(
        "ate_norm {after:.4} trained vs {before:.4} at init, {el:.0?}"
    ))
}

fn generate_small(dir: &Path, seed: &str) -> Result<PathBuf, String> {
    let out = dir.join(format!("data_{seed}"));
    run(&[
        "generate",
        "--out",
        s(&out),
        "--num-train",
        "2",
        "--num-val",
        "1",
        "--num-test",
        "2",
        "--duration",
        "8",
        "--seed",
        seed,
    ])?;
    Ok(out)
}

fn ablation_ladder(dir: &Path) -> Outcome {
    let data = generate_small(dir, "9")?;
    let out = dir.join("ablate");
    run(&[
        "ablate",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--batch-size",
        "16",
    ])?;
    let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    check!(
        names
            == [
                "i_base_ade",
                "ii_deeper",
                "iii_wider",
                "iv_patch_stem",
                "v_layer_norm",
                "full",
                "wo_stgu"
            ],
        "variants {names:?}"
    );
    for r in &rows {
        for col in 7..11 {
            let v: f64 = r[col]
                .parse()
                .map_err(|_| format!("bad value {}", &r[col]))?;
            check!(v.is_finite(), "{} column {col} is {v}", &r[0]);
        }
    }
    let params = |i: usize| rows[i][6].parse::<u64>().unwrap();
    check!(
        params(2) > params(1),
        "params ii {} vs iii {}",
        params(1),
        params(2)
    );
    let diff: Vec<usize> = (1..7).filter(|&c| rows[3][c] != rows[4][c]).collect();
    check!(diff == [2], "iv and v differ in columns {diff:?}");
    Ok(format!(
        "7 variants, params ii {} < iii {}, iv/v differ only by norm",
        params(1),
        params(2)
    ))
}

fn arb_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let odd = |rng: &mut ChaCha8Rng| 2 * rng.gen_range(0..5) + 1;
    ModelConfig {
        stage_widths: [(); 4].map(|_| 2 * rng.gen_range(1..=32)),
        stage_depths: [(); 4].map(|_| rng.gen_range(1..=3)),
        wing_kernel_bases: [odd(rng), odd(rng)],
        stgu_value_kernel: odd(rng),
        stem_kind: if rng.gen() {
            StemKind::NonoverlapK4s4
        } else {
            StemKind::Conv7s2Maxpool
        },
        norm_kind: if rng.gen() {
            NormKind::BatchNorm
        } else {
            NormKind::LayerNorm
        },
        stgu_enabled: rng.gen(),
        stgu_gating_axis: if rng.gen() {
            GatingAxis::Time
        } else {
            GatingAxis::Channel
        },
        output_dim: rng.gen_range(1..=3),
    }
}

fn accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let cfg = arb_config(&mut rng);
        let analytic = count_parameters(&cfg).map_err(|e| e.to_string())?;
        let runtime = IoNext::<f32>::new(cfg.clone(), 0)
            .map_err(|e| e.to_string())?
            .params()
            .trainable_count();
        check!(
            analytic == runtime,
            "{cfg:?}: analytic {analytic} vs runtime {runtime}"
        );
    }
    let out = run(&["inspect"])?;
    let count = count_parameters(&ModelConfig::default()).unwrap();
    check!(
        out.contains(&format!("params (analytic): {count}")),
        "inspect output:\n{out}"
    );
    check!(out.contains("FLOPs"), "no FLOP estimate:\n{out}");
    check!(
        out.contains("1.1e7") && out.contains("7.3e7"),
        "no reference figures:\n{out}"
    );
    check!(out.contains("caveat"), "no caveat:\n{out}");
    Ok(format!(
        "20 configs exact; default {count} params beside 1.1e7 / 7.3e7"
    ))
}

fn determinism(dir: &Path) -> Outcome {
    let mut results = Vec::new();
    for run_id in ["a", "b"] {
        let root = dir.join(run_id);
        let data = generate_small(&root, "11")?;
        let out = root.join("run");
        run(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--model-config",
            "tiny",
            "--epochs",
            "2",
            "--batch-size",
            "16",
            "--lr",
            "1e-3",
            "--seed",
            "4",
        ])?;
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![data.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
                let p = e.map_err(|e| e.to_string())?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if !p.ends_with("run_manifest.json") {
                    let rel = p.strip_prefix(&data).unwrap().display().to_string();
                    files.push((rel, fs::read(&p).map_err(|e| e.to_string())?));
                }
            }
        }
        files.sort();
        for f in ["best.ckpt", "best.ckpt.json"] {
            files.push((f.into(), fs::read(out.join(f)).map_err(|e| e.to_string())?));
        }
        results.push(files);
    }
    let n = results[0].len();
    check!(results[0] == results[1], "outputs differ between runs");
    Ok(format!("{n} dataset and checkpoint files byte-identical"))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (verdict, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    // Written past the test harness capture so the lines always show.
    let line = format!("criterion {n}: {verdict}  {name}: {detail}\n");
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let results = [
        report(1, "shape pipeline", shape_pipeline),
        report(2, "gradient correctness", gradient_correctness),
        report(3, "layer oracles", layer_oracles),
        report(4, "softmax/gate invariants", softmax_and_gate_invariants),
        report(5, "metric oracles", metric_oracles),
        report(6, "shortening property", shortening_property),
        report(7, "overfit drill", overfit_drill),
        report(8, "end-to-end learning signal", end_to_end),
        report(9, "ablation ladder", || ablation_ladder(dir)),
        report(10, "accounting", accounting),
        report(11, "determinism", || determinism(dir)),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
