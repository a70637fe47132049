use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shrinkcl"));
    c.env_remove("SHRINKCL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth_into(dir: &Path, cells: &str, seed: &str) {
    ok(&[
        "synth", "--cells", cells, "--genes", "20", "--clusters", "3", "--centroid-scale", "2", "--seed", seed,
        "--out", dir.to_str().unwrap(),
    ]);
}

fn train_args<'a>(data: &'a str, labels: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", data, "--labels", labels, "--allow-negative", "--preprocess", "standardize",
        "--clusters", "3", "--epochs", "3", "--batch-size", "16", "--eval-every", "1", "--out", out,
    ]
}

#[test]
fn synth_writes_matrix_and_labels() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    for p in [&a, &b] {
        ok(&[
            "synth", "--cells", "100", "--genes", "50", "--clusters", "3", "--seed", "1", "--out",
            p.to_str().unwrap(),
        ]);
    }
    let m = std::fs::read(a.join("matrix.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&m).lines().count(), 101);
    assert_eq!(m, std::fs::read(b.join("matrix.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("labels.csv")).unwrap(),
        std::fs::read(b.join("labels.csv")).unwrap()
    );
}

#[test]
fn synth_rejects_more_clusters_than_cells() {
    let d = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--cells", "3", "--clusters", "5", "--out", d.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn train_then_eval_round_trip() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "60", "2");
    let data = d.path().join("matrix.csv");
    let labels = d.path().join("labels.csv");
    let out = d.path().join("run");
    let (data_s, labels_s, out_s) = (data.to_str().unwrap(), labels.to_str().unwrap(), out.to_str().unwrap());
    let mut args = train_args(data_s, labels_s, out_s);
    args.push("--no-noise");
    ok(&args);
    for f in ["checkpoint.json", "report.json", "curves.csv", "assignments.csv", "config.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let cfg = json(&out.join("config.json"));
    assert_eq!(cfg["augment"]["noise_enabled"], Value::Bool(false));
    let report = json(&out.join("report.json"));
    assert_eq!(report["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(
        std::fs::read_to_string(out.join("assignments.csv")).unwrap().lines().count(),
        61
    );

    let ckpt = out.join("checkpoint.json");
    let eval_json = d.path().join("eval.json");
    ok(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data_s, "--labels", labels_s, "--out",
        eval_json.to_str().unwrap(),
    ]);
    let ev = json(&eval_json);
    for key in ["ari", "nmi", "nmi_geometric", "ari_kmeans", "nmi_kmeans", "cosine_gap"] {
        assert_eq!(ev[key], report["final_eval"][key], "{key}");
    }
}

#[test]
fn eval_without_labels_reports_gap_only() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "40", "3");
    let data = d.path().join("matrix.csv");
    let labels = d.path().join("labels.csv");
    let out = d.path().join("run");
    ok(&train_args(data.to_str().unwrap(), labels.to_str().unwrap(), out.to_str().unwrap()));
    let r = run(&[
        "eval", "--checkpoint", out.join("checkpoint.json").to_str().unwrap(), "--data", data.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ev: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(ev["ari"].is_null() && ev["nmi"].is_null());
    assert!(ev["cosine_gap"]["gap"].is_number());
    assert!(String::from_utf8_lossy(&r.stderr).contains("no labels"));
}

#[test]
fn corrupted_checkpoint_is_reported() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "20", "4");
    let ckpt = d.path().join("checkpoint.json");
    std::fs::write(&ckpt, "{\"format\": \"shrinkcl-checkpoint\", \"vers").unwrap();
    let r = run(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", d.path().join("matrix.csv").to_str().unwrap(),
        "--allow-negative", "--preprocess", "standardize",
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("checkpoint"));
}

#[test]
fn loss_set_flag_selects_ablation_arm() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "40", "5");
    let out = d.path().join("run");
    let data = d.path().join("matrix.csv");
    let labels = d.path().join("labels.csv");
    let mut args = train_args(data.to_str().unwrap(), labels.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--loss-set", "ins"]);
    ok(&args);
    let report = json(&out.join("report.json"));
    assert_eq!(report["losses"], "ins");
    for e in report["epochs"].as_array().unwrap() {
        assert_eq!(e["l_sure"].as_f64(), Some(0.0));
        assert_eq!(e["l_clu"].as_f64(), Some(0.0));
    }
}

#[test]
fn config_file_and_unknown_keys() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "40", "6");
    let cfg = d.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"data": {{"path": {:?}, "labels": {:?}, "allow_negative": true}},
                "preprocess": {{"normalize_library_size": false, "log1p": false, "n_top_genes": null}},
                "kmeans": {{"k": 3}}, "train": {{"epochs": 2, "batch_size": 16}},
                "output": {{"dir": {:?}}}}}"#,
            d.path().join("matrix.csv"),
            d.path().join("labels.csv"),
            d.path().join("run")
        ),
    )
    .unwrap();
    ok(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "1"]);
    let report = json(&d.path().join("run/report.json"));
    assert_eq!(report["epochs"].as_array().unwrap().len(), 1);

    std::fs::write(&cfg, r#"{"train": {"epochz": 2}}"#).unwrap();
    let r = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("epochz"));
}

#[test]
fn bench_estimators_validates_trials() {
    let r = run(&["bench-estimators", "--trials", "100"]);
    assert!(!r.status.success());
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bench.json");
    ok(&["bench-estimators", "--trials", "1000", "--out", p.to_str().unwrap()]);
    let v = json(&p);
    let mut ps: Vec<u64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["config"]["p"].as_u64().unwrap())
        .collect();
    ps.dedup();
    assert_eq!(ps, vec![3, 10, 50]);
}

#[test]
fn downsample_writes_subset() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "50", "7");
    let out = d.path().join("sub.csv");
    ok(&[
        "downsample", "--data", d.path().join("matrix.csv").to_str().unwrap(), "--labels",
        d.path().join("labels.csv").to_str().unwrap(), "--allow-negative", "--rate", "0.2", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 41);
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    synth_into(d.path(), "40", "8");
    let out = d.path().join("ablate.json");
    ok(&[
        "ablate", "--data", d.path().join("matrix.csv").to_str().unwrap(), "--labels",
        d.path().join("labels.csv").to_str().unwrap(), "--allow-negative", "--preprocess", "standardize",
        "--clusters", "3", "--epochs", "2", "--batch-size", "16", "--variants", "ins;full", "--seeds", "1",
        "--out", out.to_str().unwrap(),
    ]);
    let rows = json(&out)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["seed"] == 1));
}

#[test]
fn thread_cap_env_var() {
    let d = tempfile::tempdir().unwrap();
    let r = bin()
        .env("SHRINKCL_THREADS", "zero")
        .args(["synth", "--cells", "10", "--genes", "5", "--clusters", "2", "--out", d.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("SHRINKCL_THREADS"));
    let r = bin()
        .env("SHRINKCL_THREADS", "1")
        .args(["synth", "--cells", "10", "--genes", "5", "--clusters", "2", "--out", d.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(r.status.success());
}
