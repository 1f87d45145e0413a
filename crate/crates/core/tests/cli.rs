mod common;

use std::path::Path;
use std::process::{Command, Output};

use spatialnet::export::parse_positions_csv;
use spatialnet::persist::{load_assignment, load_checkpoint, RunConfig};
use spatialnet::train::init_checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spatialnet"));
    c.env_remove("SPATIALNET_DATA");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const TINY: &str = r#"{"hidden_layers": [8, 6, 6, 8], "batch_size": 16, "epochs": 2}"#;

#[test]
fn zero_epochs_writes_the_initialization_without_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--epochs", "0", "--seed", "4", "--out", "init.ckpt", "--data", "nowhere"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = load_checkpoint(&tmp.path().join("init.ckpt")).unwrap();
    let cfg = RunConfig { epochs: 0, seed: 4, ..RunConfig::default() };
    assert_eq!(ckpt, init_checkpoint(&cfg).unwrap());
}

#[test]
fn missing_data_exits_2_with_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = run(&["train", "--config", &cfg, "--data", "absent", "--out", "x.ckpt"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fetch_data.sh"), "{}", stderr(&out));
    assert!(!tmp.path().join("x.ckpt").exists());
}

#[test]
fn bad_flags_and_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--mode", "diagonal", "--out", "x"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&[], tmp.path()).status.code(), Some(2));
    let cfg = write_config(tmp.path(), r#"{"alpah": 1.0}"#);
    let out = run(&["train", "--config", &cfg, "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpah"));
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_synthetic_data(&data, 96, 40);
    let cfg = write_config(tmp.path(), TINY);

    let out = bin()
        .args(["train", "--config", &cfg, "--mode", "concat", "--spatial", "on", "--out", "s.ckpt"])
        .env("SPATIALNET_DATA", &data)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(tmp.path().join("s.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["penalty"].is_f64() && v["layers"].as_array().unwrap().len() == 3);
        assert!(v["train_accuracy"]["average"].is_f64());
    }

    let out = run(&["split", "--checkpoint", "s.ckpt", "--out", "s.json"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("inter-group weight mass"));
    let a = load_assignment(&tmp.path().join("s.json")).unwrap();
    assert_eq!(a.split_layers, vec![3, 4, 5]);

    let data_arg = data.display().to_string();
    let out = run(
        &["eval", "--checkpoint", "s.ckpt", "--assignment", "s.json", "--data", &data_arg, "--results", "r.jsonl"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["drop"].is_f64() && report["split"]["average"].is_f64());
    let out = run(&["eval", "--checkpoint", "s.ckpt", "--data", &data_arg, "--results", "r.jsonl"], tmp.path());
    assert!(out.status.success());
    let results = std::fs::read_to_string(tmp.path().join("r.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    let second: serde_json::Value = serde_json::from_str(results.lines().nth(1).unwrap()).unwrap();
    assert!(second["drop"].is_null());

    let out = run(
        &["export", "--checkpoint", "s.ckpt", "--assignment", "s.json", "--out", "fig", "--min-inweight", "0"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = load_checkpoint(&tmp.path().join("s.ckpt")).unwrap();
    let rows = parse_positions_csv(&std::fs::read_to_string(tmp.path().join("fig/positions.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6 + 8 + 20);
    for r in &rows {
        let [x, y] = ckpt.positions.point(r.layer, r.neuron);
        assert!((r.x - x).abs() <= 1e-9 && (r.y - y).abs() <= 1e-9);
    }
    let edges = std::fs::read_to_string(tmp.path().join("fig/edges.csv")).unwrap();
    assert!(edges.starts_with("src_layer,src,dst,abs_weight\n"));
    let svg = std::fs::read_to_string(tmp.path().join("fig/topdown.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn baseline_log_has_no_spatial_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_synthetic_data(&data, 64, 20);
    let cfg = write_config(tmp.path(), TINY);
    let data_arg = data.display().to_string();
    let out = run(
        &["train", "--config", &cfg, "--mode", "sequential", "--spatial", "off", "--data", &data_arg, "--out", "r.ckpt", "--log", "r.log"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(tmp.path().join("r.log")).unwrap();
    assert!(!log.contains("penalty") && !log.contains("transport") && !log.contains("density"));
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_synthetic_data(&data, 64, 20);
    let cfg = write_config(tmp.path(), TINY);
    let data_arg = data.display().to_string();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = run(&["train", "--config", &cfg, "--mode", "mixed", "--data", &data_arg, "--out", name], tmp.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(tmp.path().join("a.ckpt")).unwrap();
    let b = std::fs::read(tmp.path().join("b.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergent_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_synthetic_data(&data, 64, 20);
    let cfg = write_config(
        tmp.path(),
        r#"{"hidden_layers": [8, 6, 6, 8], "batch_size": 16, "epochs": 3, "optimizer": "sgd", "learning_rate": 1e300}"#,
    );
    let data_arg = data.display().to_string();
    let out = run(&["train", "--config", &cfg, "--data", &data_arg, "--out", "n.ckpt"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn full_size_export_with_zero_threshold_has_404_rows() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["train", "--epochs", "0", "--out", "i.ckpt"], tmp.path()).status.success());
    assert!(run(&["split", "--checkpoint", "i.ckpt", "--out", "i.json"], tmp.path()).status.success());
    let out = run(
        &["export", "--checkpoint", "i.ckpt", "--assignment", "i.json", "--out", "fig", "--min-inweight", "0"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = parse_positions_csv(&std::fs::read_to_string(tmp.path().join("fig/positions.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 128 + 256 + 20);

    // default threshold: only neurons with summed |incoming weight| above 0.1
    let out = run(&["export", "--checkpoint", "i.ckpt", "--assignment", "i.json", "--out", "def"], tmp.path());
    assert!(out.status.success());
    let kept = parse_positions_csv(&std::fs::read_to_string(tmp.path().join("def/positions.csv")).unwrap()).unwrap();
    assert!(kept.iter().all(|r| r.abs_inweight_sum > 0.1));
    let svg = std::fs::read_to_string(tmp.path().join("def/topdown.svg")).unwrap();
    assert_eq!(svg.matches("data-neuron=").count(), kept.len());
}

#[test]
fn export_without_assignment_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["train", "--epochs", "0", "--out", "i.ckpt"], tmp.path()).status.success());
    let out = run(&["export", "--checkpoint", "i.ckpt", "--assignment", "missing.json", "--out", "fig"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("fig").exists());
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in ["0", "7"] {
        let out = run(&["gradcheck", "--seed", seed, "--size", "small"], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let out = run(&["gradcheck", "--perturb-gradient", "0.01"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}
