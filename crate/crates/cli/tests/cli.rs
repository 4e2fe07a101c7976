use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ionext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionext"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ionext(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = ionext(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(root: &Path, name: &str, rate: &str) -> PathBuf {
    let out = root.join(name);
    ok(&[
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
        "6",
        "--rate",
        rate,
        "--seed",
        "5",
    ]);
    out
}

fn train_tiny(data: &Path, out: &Path, epochs: &str) -> String {
    ok(&[
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--model-config",
        "tiny",
        "--epochs",
        epochs,
        "--batch-size",
        "16",
        "--lr",
        "1e-3",
        "--seed",
        "3",
    ])
}

/// Every regular file under `dir`, relative path → bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_writes_requested_splits_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        ok(&[
            "generate",
            "--out",
            s(out),
            "--num-train",
            "4",
            "--num-val",
            "1",
            "--num-test",
            "1",
            "--duration",
            "60",
            "--rate",
            "200",
            "--seed",
            "7",
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(args(&a).contains("wrote 6 sequences"));
    args(&b);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert_eq!(
        manifest.lines().filter(|l| l.contains(",train,")).count(),
        4
    );
    assert!(a.join("run_manifest.json").is_file());
    let snap = snapshot(&a);
    assert_eq!(
        snap.iter().filter(|(p, _)| p.ends_with("imu.csv")).count(),
        6
    );
    assert_eq!(snap, snapshot(&b));

    let err = fail(&[
        "generate",
        "--out",
        s(&tmp.path().join("c")),
        "--duration",
        "0.5",
    ]);
    assert!(err.contains("duration"), "{err}");
}

#[test]
fn run_manifest_records_command_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), "d", "200");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "generate");
    assert_eq!(m["config"]["spec"]["rng_seed"], 5);
    assert!(m["argv"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a == "--num-test"));
    assert!(m["finished_unix_s"].as_f64().unwrap() >= m["started_unix_s"].as_f64().unwrap());
    assert!(m["tool_version"].is_string());
}

#[test]
fn train_eval_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), "d", "200");
    let run = tmp.path().join("run");
    let out = train_tiny(&data, &run, "2");
    assert!(
        out.contains("stop: max_epochs") || out.contains("stop: lr_floor"),
        "{out}"
    );
    for f in [
        "best.ckpt",
        "best.ckpt.json",
        "last.ckpt",
        "history.csv",
        "run_manifest.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let resumed = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--resume",
        s(&run.join("last.ckpt")),
        "--epochs",
        "4",
        "--batch-size",
        "16",
        "--lr",
        "1e-3",
        "--seed",
        "3",
    ]);
    assert!(resumed.contains("stop: max_epochs"), "{resumed}");
    let epochs: Vec<String> = fs::read_to_string(run.join("history.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_owned())
        .collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);

    let report = tmp.path().join("report");
    let out = ok(&[
        "eval",
        "--data",
        s(&data),
        "--ckpt",
        s(&run.join("best.ckpt")),
        "--report-dir",
        s(&report),
        "--horizon",
        "30",
    ]);
    assert!(out.contains("sequences 2  horizon_s 30"), "{out}");
    for key in ["ate_norm", "rte_norm", "ale_norm"] {
        assert!(out.contains(key));
    }
    for f in [
        "report.csv",
        "aggregates.csv",
        "cdf_ate.csv",
        "cdf_rte.csv",
        "run_manifest.json",
    ] {
        assert!(report.join(f).is_file(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["eval"]["horizon"], 30.0);

    // A checkpoint trained on 200 Hz data must not evaluate 100 Hz data.
    let slow = small_dataset(tmp.path(), "slow", "100");
    let err = fail(&[
        "eval",
        "--data",
        s(&slow),
        "--ckpt",
        s(&run.join("best.ckpt")),
        "--report-dir",
        s(&tmp.path().join("r2")),
    ]);
    assert!(err.contains("200") && err.contains("100 Hz"), "{err}");
}

#[test]
fn train_reports_missing_data_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_dataset");
    let err = fail(&[
        "train",
        "--data",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert!(err.contains("no_such_dataset"), "{err}");
}

#[test]
fn inspect_prints_shapes_and_reference_figures() {
    let out = ok(&["inspect"]);
    for line in [
        "stage1: 96x50",
        "stage2: 192x25",
        "stage3: 384x12",
        "stage4: 768x6",
        "head: 2",
    ] {
        assert!(out.contains(line), "{line} missing:\n{out}");
    }
    assert!(out.contains("params (analytic): 6332870"));
    assert!(out.contains("params (runtime):  6332870"));
    assert!(out.contains("1.1e7") && out.contains("7.3e7"), "{out}");

    let base = ok(&["inspect", "--model-config", "i_base_ade"]);
    assert!(
        base.contains("widths=[64, 128, 256, 512]") && base.contains("depths=[2, 2, 2, 2]"),
        "{base}"
    );
    let err = fail(&["inspect", "--model-config", "nonexistent.toml"]);
    assert!(err.contains("nonexistent.toml"));
}

#[test]
fn ablate_reports_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), "d", "200");
    let out = tmp.path().join("ab");
    let text = ok(&[
        "ablate",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "1",
        "--batch-size",
        "16",
    ]);
    assert!(text.contains("budget: 1 epochs"));
    let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(
        names,
        [
            "i_base_ade",
            "ii_deeper",
            "iii_wider",
            "iv_patch_stem",
            "v_layer_norm",
            "full",
            "wo_stgu"
        ]
    );
    let params = |i: usize| rows[i][6].parse::<u64>().unwrap();
    assert!(params(2) > params(1));
    for col in 1..6 {
        if col != 2 {
            assert_eq!(rows[3][col], rows[4][col]);
        }
    }
    assert_ne!(rows[3][2], rows[4][2]);
    for r in &rows {
        for col in 7..11 {
            assert!(r[col].parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn gradcheck_exit_status_follows_verdict() {
    let out = ok(&["gradcheck", "--gating-axis", "channel"]);
    assert!(out.contains("gradcheck: pass"), "{out}");
    assert!(out.contains("max relative error"));

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gc");
    let out = ionext(&[
        "gradcheck",
        "--tolerance",
        "1e-12",
        "--sampled",
        "20",
        "--out",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck: fail"));
    assert!(dir.join("gradcheck.csv").is_file());
    assert!(dir.join("run_manifest.json").is_file());
}

#[test]
fn help_lists_subcommands() {
    let out = ok(&["--help"]);
    for cmd in [
        "generate",
        "train",
        "eval",
        "inspect",
        "ablate",
        "gradcheck",
    ] {
        assert!(out.contains(cmd));
    }
    assert!(ok(&["train", "--help"]).contains("--resume"));
    assert_eq!(ionext(&["bogus"]).status.code(), Some(2));
}
