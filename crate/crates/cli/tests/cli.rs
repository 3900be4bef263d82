use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fovlab::geometry::PointCloud;
use fovlab::scene::dataset::load_manifest;
use tempfile::TempDir;

const CONFIG: &str = r#"{
  "grid": {"extent": 32.0, "resolution": 32},
  "net": {"depth": 3, "base_channels": 4, "dropout_rate": 0.1, "resolution": 32},
  "train": {"learning_rate": 0.01, "max_epochs": 2, "batch_size": 5, "patience": 2, "seed": 0},
  "splits": {"train": 10, "val": 20, "test": 6},
  "mcd": {"passes": 4, "seed": 0, "threshold": 0.7}
}"#;

fn fovlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fovlab")).args(args).env("FOVLAB_THREADS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fovlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fovlab(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.json"), CONFIG).unwrap();
        let f = Fixture { dir };
        ok(&["synth", "--quiet", "--config", s(&f.config()), "--seed", "5", "--out", s(&f.path("data"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("config.json")
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_writes_requested_frames_reproducibly() {
    let f = Fixture::new();
    let m = load_manifest(f.path("data")).unwrap();
    assert_eq!((m.splits.train.len(), m.splits.val.len(), m.splits.test.len()), (10, 20, 6));
    ok(&["synth", "--quiet", "--config", s(&f.config()), "--seed", "5", "--out", s(&f.path("again"))]);
    assert_eq!(tree(&f.path("data")), tree(&f.path("again")));
    ok(&["synth", "--quiet", "--config", s(&f.config()), "--seed", "6", "--out", s(&f.path("other"))]);
    assert_ne!(tree(&f.path("data")), tree(&f.path("other")));
}

#[test]
fn synth_refuses_non_empty_output_without_force() {
    let f = Fixture::new();
    let (cfg, data) = (f.config(), f.path("data"));
    let args = ["synth", "--quiet", "--config", s(&cfg), "--test", "3", "--out", s(&data)];
    assert_eq!(code(&args), 2);
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
    assert_eq!(load_manifest(f.path("data")).unwrap().splits.test.len(), 3);
}

#[test]
fn attack_appends_points_and_keeps_masks() {
    let f = Fixture::new();
    let run = |out: &str| {
        ok(&["attack", "--quiet", "--dataset", s(&f.path("data")), "--out", s(&f.path(out)), "--kind", "uniform", "--points", "40", "--bounds", "32"])
    };
    run("adv");
    run("adv2");
    assert_eq!(tree(&f.path("adv")), tree(&f.path("adv2")));
    let m = load_manifest(f.path("adv")).unwrap();
    assert_eq!(m.attack.as_ref().unwrap().n_points, 40);
    for e in m.splits.train.iter().chain(&m.splits.test) {
        let benign = PointCloud::<f64>::load(f.path("data").join(&e.cloud)).unwrap();
        let spoofed = PointCloud::<f64>::load(f.path("adv").join(&e.cloud)).unwrap();
        assert_eq!(spoofed.len(), benign.len() + 40);
        assert_eq!(fs::read(f.path("data").join(&e.mask)).unwrap(), fs::read(f.path("adv").join(&e.mask)).unwrap());
    }
    // over budget
    assert_eq!(code(&["attack", "--quiet", "--dataset", s(&f.path("data")), "--out", s(&f.path("adv3")), "--points", "151"]), 2);
}

#[test]
fn estimate_scores_rayq_and_rejects_typos() {
    let f = Fixture::new();
    let out = f.path("est");
    ok(&["estimate", "--quiet", "--dataset", s(&f.path("data")), "--method", "rayq", "--out", s(&out)]);
    let rows: Vec<serde_json::Value> =
        fs::read_to_string(out.join("frames.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let mean_iou = rows.iter().map(|r| r["iou"].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
    assert!(mean_iou >= 0.9, "mean IoU {mean_iou}");
    for ext in ["jsonl", "csv", "txt"] {
        assert!(out.join(format!("metrics.{ext}")).exists());
    }
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 6);
    assert_eq!(code(&["estimate", "--dataset", s(&f.path("data")), "--method", "rayqq", "--out", s(&out)]), 2);
}

#[test]
fn train_eval_and_bench_round_trip() {
    let f = Fixture::new();
    let cfg = f.config();
    let train = |out: &str| ok(&["train", "--quiet", "--config", s(&cfg), "--dataset", s(&f.path("data")), "--out", s(&f.path(out))]);
    train("net.fvnt");
    train("net2.fvnt");
    assert!(f.path("net.jsonl").exists());
    assert_eq!(fs::read(f.path("net.fvnt")).unwrap(), fs::read(f.path("net2.fvnt")).unwrap());
    assert_eq!(fs::read_to_string(f.path("net.jsonl")).unwrap().lines().count(), 2);

    let eval = |out: &str| {
        ok(&["eval", "--quiet", "--config", s(&cfg), "--model", &format!("sparse={}", s(&f.path("net.fvnt"))),
            "--test", &format!("sparse={}", s(&f.path("data"))), "--out", s(&f.path(out))]);
        fs::read(f.path(out).join("metrics.jsonl")).unwrap()
    };
    let first = eval("eval1");
    assert_eq!(first, eval("eval2"));
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 2);

    let missing = fovlab(&["eval", "--quiet", "--model", "sparse:adv=/nonexistent/net.fvnt", "--test", &format!("sparse={}", s(&f.path("data"))), "--out", s(&f.path("eval3"))]);
    assert_eq!(missing.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&missing.stderr);
    assert!(msg.contains("train=sparse") && msg.contains("variant=adv"), "{msg}");

    let bench = ok(&["bench", "--quiet", "--dataset", s(&f.path("data")), "--method", "mle", "--checkpoint", s(&f.path("net.fvnt")), "--runs", "10"]);
    let v: serde_json::Value = serde_json::from_str(&bench).unwrap();
    assert!(v["median_ms"].as_f64().unwrap() <= v["p95_ms"].as_f64().unwrap());
    assert!(v["median_hz"].as_f64().unwrap() > 0.0);

    let cal = f.path("anomaly.json");
    ok(&["calibrate", "--quiet", "--config", s(&cfg), "--checkpoint", s(&f.path("net.fvnt")), "--dataset", s(&f.path("data")), "--out", s(&cal)]);
    let m = load_manifest(f.path("data")).unwrap();
    let report = ok(&["infer", "--quiet", "--checkpoint", s(&f.path("net.fvnt")), "--cloud", s(&f.path("data").join(&m.splits.test[0].cloud)),
        "--mcd", "4", "--anomaly", s(&cal), "--out", s(&f.path("mask.pgm"))]);
    assert!(report.contains("flagged"), "{report}");
    assert!(f.path("mask.pgm").exists());
}

#[test]
fn bench_reports_classical_percentiles() {
    let f = Fixture::new();
    let out = ok(&["bench", "--quiet", "--dataset", s(&f.path("data")), "--method", "rayq", "--resolution", "256", "--runs", "20"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["resolution"], 256);
    let (median, p95) = (v["median_ms"].as_f64().unwrap(), v["p95_ms"].as_f64().unwrap());
    assert!(median > 0.0 && median <= p95);
    assert!(v["median_hz"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_configs_and_environment_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seeed": 1}"#).unwrap();
    assert_eq!(code(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_fovlab"))
        .args(["synth", "--out", s(&dir.path().join("d"))])
        .env("FOVLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(code(&["synth", "--config", s(&dir.path().join("absent.json")), "--out", s(&dir.path().join("d"))]), 3);
}

#[test]
fn every_command_prints_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = fovlab(&["synth", "--seed", "42", "--train", "1", "--val", "1", "--test", "1", "--out", s(&dir.path().join("d"))]);
    assert!(out.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(cfg["seed"], 42);
    assert_eq!(cfg["train"]["seed"], 42);
}
