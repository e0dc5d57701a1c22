use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn g2pxy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2pxy")).args(args).output().expect("binary runs")
}

fn cora_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")
}

const DEFAULT_TRAIN: &str = r#""epochs": 8, "lr": 0.01"#;

fn write_config(dir: &Path, train: &str) -> PathBuf {
    let cfg = format!(
        r#"{{
  "dataset": {{"kind": "sbm", "sizes": [20, 20, 20], "p_in": 0.3, "p_out": 0.02, "dim": 8, "seed": 5}},
  "split": {{"mode": "inductive", "seed": 1}},
  "backbone": {{"hidden_dims": [16, 8, 8]}},
  "train": {{{train}}},
  "output_dir": "out"
}}"#
    );
    let path = dir.join("run.json");
    fs::write(&path, cfg).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_cora_prints_stats_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cora.json");
    let content = cora_dir().join("cora.content");
    let cites = cora_dir().join("cora.cites");
    let args = [
        "prepare",
        "--content",
        content.to_str().unwrap(),
        "--cites",
        cites.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let first = g2pxy(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(String::from_utf8_lossy(&first.stdout).trim(), "2708 5429 1433 7");
    let bytes = fs::read(&out).unwrap();
    assert!(g2pxy(&args).status.success());
    assert_eq!(fs::read(&out).unwrap(), bytes);
}

#[test]
fn prepare_missing_file_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.content");
    let o = g2pxy(&[
        "prepare",
        "--content",
        missing.to_str().unwrap(),
        "--cites",
        "x.cites",
        "--out",
        dir.path().join("o.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.content"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"dataset": {"kind": "sbm", "sizes": [5], "p_in": 0.5, "p_out": 0.1, "dim": 2, "seed": 0}, "bogus": 1}"#).unwrap();
    let o = g2pxy(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write_config(dir.path(), DEFAULT_TRAIN);
    let o = g2pxy(&["train", "--config", cfg.to_str().unwrap(), "--variant", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""epochs": 8, "lr": 1e300, "optimizer": {"kind": "sgd"}"#);
    let o = g2pxy(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(dir.path().join("out/failure.txt").exists());
}

#[test]
fn train_then_eval_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DEFAULT_TRAIN);
    let cfg_s = cfg.to_str().unwrap();
    let o = g2pxy(&["train", "--config", cfg_s, "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["test"]["ind_accuracy"].is_number());
    assert!(report["test"]["ood_accuracy"].is_number());
    assert_eq!(report["config"]["seed"], 4);
    assert!(out.join("timing.json").exists());
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let first = fs::read(out.join("report.json")).unwrap();
    assert!(g2pxy(&["train", "--config", cfg_s, "--seed", "4"]).status.success());
    assert_eq!(fs::read(out.join("report.json")).unwrap(), first);

    let model = out.join("model.json");
    let o = g2pxy(&["eval", "--config", cfg_s, "--seed", "4", "--checkpoint", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["test"], report["test"]);
}

#[test]
fn mode_and_unknown_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DEFAULT_TRAIN);
    let o = g2pxy(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "transductive",
        "--unknown",
        "block0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["split"]["mode"], "transductive");
    assert_eq!(report["split"]["unknown_classes"][0], "block0");
}

#[test]
fn ablate_no_coe_records_zero_lambda2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DEFAULT_TRAIN);
    let o = g2pxy(&["ablate", "--config", cfg.to_str().unwrap(), "--variant", "no_coe"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/no_coe_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["loss"]["lambda2"], 0.0);
    assert_eq!(report["config"]["variant"], "no_coe");
    let csv = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn grid_writes_25_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DEFAULT_TRAIN);
    let o = g2pxy(&["grid", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let grid: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/grid.json")).unwrap()).unwrap();
    assert_eq!(grid["cells"].as_array().unwrap().len(), 25);
    let csv = fs::read_to_string(dir.path().join("out/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sbm.json");
    let o = g2pxy(&["synth", "--sizes", "10,10", "--p-in", "0.4", "--p-out", "0.05", "--dim", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = String::from_utf8_lossy(&o.stdout);
    assert!(stats.starts_with("20 "));
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"dataset": {"kind": "canonical", "path": "sbm.json"}, "backbone": {"hidden_dims": [4, 4, 4]}, "train": {"epochs": 2}, "output_dir": "o"}"#,
    )
    .unwrap();
    let o = g2pxy(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}
