use std::path::Path;
use std::process::{Command, Output};

use dtsst_core::metrics::wilcoxon_signed_rank;
use proptest::prelude::*;

fn dtsst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtsst")).args(args).output().expect("spawn dtsst")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", path(dir), "--n", "4", "--test-n", "2"];
    args.extend_from_slice(extra);
    let o = dtsst(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = dtsst(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = dtsst(&["train", "--epochs", "many"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dtsst(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["synth", "transform", "augment", "train", "eval", "stats", "gradcheck"] {
        assert!(stdout(&o).contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn mismatched_geometry_names_both_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--ch", "5"]);
    let out = tmp.path().join("run");
    let o = dtsst(&["train", "--preset", "mini", "--data", path(&data), "--out", path(&out), "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[ch=5, T=64, F=6]") && err.contains("[ch=4, T=64, F=6]"), "{err}");
}

#[test]
fn validation_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("run");
    let base = ["train", "--preset", "mini", "--data", path(&data), "--out", path(&out), "--epochs", "1"];

    let mut args = base.to_vec();
    args.extend(["--no-branch1", "--no-b2-input1", "--no-b2-input2"]);
    let o = dtsst(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("every branch"), "{}", stderr(&o));

    let mut args = base.to_vec();
    args.extend(["--ablation", "no-everything"]);
    assert_eq!(dtsst(&args).status.code(), Some(2));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nlearning_rate = 0.1\n").unwrap();
    let o = dtsst(&["train", "--config", path(&cfg), "--data", path(&data), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = dtsst(&["train", "--preset", "nope", "--data", path(&data), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = dtsst(&["train", "--preset", "mini", "--data", path(&tmp.path().join("missing")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_gradient_check_exits_three() {
    let o = dtsst(&["gradcheck", "--preset", "mini", "--batch", "1", "--tol", "1e-30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
    assert!(stderr(&o).contains("gradient check failed"));
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--classes", "6,12"]);
    let m = manifest(&data);
    assert_eq!(m["class_names"], serde_json::json!(["6Hz", "12Hz"]));
    assert_eq!(m["trials"].as_array().unwrap().len(), 12);

    let tf = tmp.path().join("tf");
    let o = dtsst(&["transform", "--data", path(&data), "--out", path(&tf), "--preset", "mini"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = manifest(&tf);
    assert_eq!(t["tfr"]["freqs"], serde_json::json!([4.0, 8.0, 12.0, 16.0, 20.0, 24.0]));
    for (a, b) in m["trials"].as_array().unwrap().iter().zip(t["trials"].as_array().unwrap()) {
        assert_eq!((&a["split"], &a["label"]), (&b["split"], &b["label"]));
    }

    let aug = tmp.path().join("aug");
    let o = dtsst(&["augment", "--data", path(&tf), "--out", path(&aug), "--r", "4", "--count", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let labels: Vec<u64> =
        manifest(&aug)["trials"].as_array().unwrap().iter().map(|t| t["label"].as_u64().unwrap()).collect();
    assert_eq!(labels, vec![0, 1, 0, 1, 0, 1, 0]);
    let o = dtsst(&["augment", "--data", path(&data), "--out", path(&aug), "--r", "4", "--count", "2"]);
    assert_eq!(o.status.code(), Some(2), "raw data has no sidecars");

    let run = tmp.path().join("run");
    let o = dtsst(&[
        "train",
        "--preset",
        "mini",
        "--data",
        path(&tf),
        "--out",
        path(&run),
        "--epochs",
        "3",
        "--batch",
        "4",
        "--no-transformer",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["resolved_config.json", "log.csv", "best.dtss", "final.dtss", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["model"]["use_transformer"], false);
    assert_eq!(resolved["train"]["epochs"], 3);
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,lr,loss,train_acc,test_acc"));
    assert_eq!(log.lines().count(), 4);

    let ev = tmp.path().join("eval");
    let o = dtsst(&[
        "eval",
        "--model",
        path(&run.join("final.dtss")),
        "--data",
        path(&tf),
        "--out",
        path(&ev),
        "--features",
        "--chance",
        "uniform",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 4);
    assert_eq!(report["chance"], "uniform");
    assert_eq!(report["config"]["model"]["use_transformer"], false);
    let csv = std::fs::read_to_string(ev.join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("pred_6Hz,pred_12Hz"));
    assert!(ev.join("features.eegt").exists());
    let o = dtsst(&[
        "eval",
        "--model",
        path(&run.join("final.dtss")),
        "--data",
        path(&tf),
        "--out",
        path(&ev),
        "--split",
        "dev",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_on_csv_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("acc.csv");
    std::fs::write(&input, "subject,full,ablated\n1,80,70\n2,90,85\n3,70,72\n4,95,80\n5,60,50\n").unwrap();
    let out = tmp.path().join("stats");
    let o = dtsst(&["stats", "--input", path(&input), "--a", "full", "--b", "ablated", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // ranks of |d| = (10, 5, 2, 15, 10): 3.5, 2, 1, 5, 3.5; W- = 1
    assert!(stdout(&o).contains("W=1 "), "{}", stdout(&o));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(s["w"], 1.0);
    assert_eq!(s["exact"], true);

    let o = dtsst(&["stats", "--input", path(&input), "--a", "full", "--b", "full"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("undefined"), "{}", stdout(&o));
    let o = dtsst(&["stats", "--input", path(&input), "--a", "full", "--b", "missing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_config_matches_the_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mini.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let common = ["--data", path(&data), "--epochs", "2", "--log-every", "0"];
    let mut args = vec!["train", "--config", path(&config), "--out", path(&a)];
    args.extend(common);
    let o = dtsst(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut args = vec!["train", "--preset", "mini", "--out", path(&b)];
    args.extend(common);
    assert_eq!(dtsst(&args).status.code(), Some(0));
    let read = |d: &Path| std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let resolved = |d: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("resolved_config.json")).unwrap()).unwrap();
        assert!(Path::new(v["out"].as_str().unwrap()).is_absolute());
        v["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(resolved(&a), resolved(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stats_agrees_with_the_library(pairs in prop::collection::vec((0u8..20, 0u8..20), 1..16)) {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("in.csv");
        let mut text = String::from("x,y\n");
        for (a, b) in &pairs {
            text += &format!("{a},{b}\n");
        }
        std::fs::write(&input, text).unwrap();
        let out = tmp.path().join("out");
        let o = dtsst(&["stats", "--input", path(&input), "--a", "x", "--b", "y", "--out", path(&out)]);
        prop_assert_eq!(o.status.code(), Some(0));
        let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
        let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        match wilcoxon_signed_rank(&xs, &ys) {
            Ok(w) => {
                prop_assert_eq!(s["w"].as_f64(), Some(w.w));
                prop_assert!((s["p_value"].as_f64().unwrap() - w.p_value).abs() < 1e-12);
            }
            Err(_) => prop_assert!(s["undefined"].is_string()),
        }
    }
}
