use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn slt(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slt-lab"))
        .arg("--registry-root")
        .arg(root)
        .args(args)
        .env_remove("SLT_LAB_REGISTRY")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const LOWRANK: &str = r#"{
    "experiment_id": "Q2E2",
    "seeds": [5],
    "runs_per_point": 1,
    "sweep": {"d": 4, "ranks": [1, 4]},
    "optimizer": {"learning_rate": 0.01, "max_steps": 2000},
    "sgld": {"epsilon": 0.0001, "steps": 200, "chains": 2}
}"#;

fn json_lines(out: &Output) -> Vec<Value> {
    stdout(out).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn unknown_experiment_is_rejected_with_the_field_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"experiment_id": "Q9E9"}"#);
    let out = slt(&dir.path().join("reg"), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("experiment_id"), "{}", stderr(&out));
    assert!(!dir.path().join("reg").exists());

    let out = slt(&dir.path().join("reg"), &["--json", "run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"], "invalid_config");
    assert!(err["message"].as_str().unwrap().contains("experiment_id"));
}

#[test]
fn missing_run_and_checkpoint_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = slt(dir.path(), &["--json", "llc", "nope", "--step", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert!(err["error"].is_string());

    let out = slt(dir.path(), &["report", "Q2E3", "--out", &dir.path().join("out").display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn run_llc_detect_report_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    let cfg = write_config(dir.path(), LOWRANK);
    let out = slt(&root, &["--json", "run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let runs = json_lines(&out);
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r["status"] == "done"));
    assert!(root.join("runs").join("Q2E2").join("summary.json").is_file());

    // a second invocation reuses both runs
    let out = slt(&root, &["--json", "run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json_lines(&out).iter().all(|r| r["status"] == "reused"));

    let listed = json_lines(&slt(&root, &["--json", "list", "Q2E2"]));
    assert_eq!(listed.len(), 2);
    assert!(json_lines(&slt(&root, &["--json", "list", "Q2E1"])).is_empty());

    let run_id = runs[1]["run_id"].as_str().unwrap().to_string();
    let ckpt = std::fs::read_dir(root.join("runs").join("Q2E2").join(&run_id).join("checkpoints"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .file_name()
        .into_string()
        .unwrap();
    let step = ckpt.trim_start_matches("ckpt_").trim_end_matches(".bin").to_string();

    let llc = |extra: &[&str]| -> Value {
        let mut args = vec!["--json", "llc", &run_id, "--step", &step];
        args.extend_from_slice(extra);
        let out = slt(&root, &args);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        serde_json::from_str(stdout(&out).trim()).unwrap()
    };
    let a = llc(&["--seed", "9"]);
    let b = llc(&["--seed", "9"]);
    assert_eq!(a["lambda_hat"], b["lambda_hat"]);
    assert_eq!(a["per_chain"], b["per_chain"]);
    assert!(a["lambda_hat"].as_f64().unwrap() > 0.5);
    // a huge localization pins the chain to w*
    let pinned = llc(&["--gamma", "1e9", "--epsilon", "1e-10"]);
    assert!(pinned["lambda_hat"].as_f64().unwrap().abs() < 1e-2, "{pinned}");

    let llc_csv = std::fs::read_to_string(root.join("runs").join("Q2E2").join(&run_id).join("llc.csv")).unwrap();
    assert_eq!(llc_csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 1 + 3);

    let out = slt(&root, &["detect", &run_id]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("scaling run"));

    let out = slt(&root, &["--json", "report", "Q2E2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["files"].as_array().unwrap().len(), 3);
    assert!(root.join("reports").join("Q2E2").join("Q2E2_scaling.svg").is_file());
}

#[test]
fn failed_run_gives_partial_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    let cfg = write_config(
        dir.path(),
        r#"{
            "experiment_id": "Q2E1",
            "runs_per_point": 1,
            "sweep": {"degrees": [3], "half_widths": [0.5, 4.0]},
            "optimizer": {"kind": "sgd", "learning_rate": 0.05, "max_steps": 3000,
                          "convergence": {"window": 200, "rel_tol": 1e-5, "abs_floor": 1e-3}},
            "sgld": {"epsilon": 0.0001, "steps": 200, "chains": 2}
        }"#,
    );
    let out = slt(&root, &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.contains("\tdone")).count(), 1);
    assert_eq!(text.lines().filter(|l| l.contains("\tfailed: ")).count(), 1);
    assert!(root.join("runs").join("Q2E1").join("summary.json").is_file());
}

#[test]
fn detect_reruns_both_detectors_on_a_transition_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    let cfg = write_config(
        dir.path(),
        r#"{"experiment_id": "Q1E2", "runs_per_point": 1, "total_steps": 300,
            "sgld": {"epsilon": 0.0005, "steps": 40, "chains": 2}}"#,
    );
    let out = slt(&root, &["--json", "run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let run_id = json_lines(&out)[0]["run_id"].as_str().unwrap().to_string();
    for variant in ["smoothing", "raw"] {
        let out = slt(&root, &["--json", "detect", &run_id, "--detector", variant]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
        assert_eq!(v["variant"], variant);
        let segments = v["segments"].as_array().unwrap().len();
        let pairs = v["pairs"].as_array().unwrap().len();
        assert_eq!(pairs, segments.saturating_sub(1));
    }
}
