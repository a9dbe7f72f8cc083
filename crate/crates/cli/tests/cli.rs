use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn privsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

const MOCK_CONFIG: &str = r#"
design = "in_study"
seed = 3
workers = 2

[dataset]
source = "syn.json"

[backend]
kind = "mock"
mock = { builtin = "rule" }
"#;

#[test]
fn synthesize_ingest_optimize_report_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&privsim(d, &["synthesize", "--respondents", "6", "--questions", "10", "--out", "syn.json"]));

    let ingest = stdout_json(&privsim(d, &["ingest", "syn.json"]));
    assert_eq!(ingest["respondents"], 6);
    assert_eq!(ingest["questions"], 10);

    std::fs::write(d.join("run.toml"), MOCK_CONFIG).unwrap();
    let run = stdout_json(&privsim(d, &["--runs-dir", "out", "optimize", "--config", "run.toml"]));
    let run_id = run["run_id"].as_str().unwrap().to_string();
    assert!(run_id.starts_with("in_study-"));
    let persona = run["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["label"] == "in_study/persona:basic")
        .unwrap();
    assert_eq!(persona["acc_s"], 1.0);
    let run_dir = d.join("out").join(&run_id);
    assert!(run_dir.join("manifest.json").exists());

    let eval = stdout_json(&privsim(d, &["--runs-dir", "out", "evaluate", "--run", &run_id]));
    assert_eq!(eval["reports"], run["reports"]);

    std::fs::remove_dir_all(run_dir.join("plots")).unwrap();
    stdout_json(&privsim(d, &["--runs-dir", "out", "report", "--run", &run_id, "--format", "plot"]));
    assert!(run_dir.join("plots/accuracy.svg").exists());

    let replay = stdout_json(&privsim(d, &["replay", "--run", run_dir.to_str().unwrap()]));
    assert_eq!(replay["identical"], true);
}

#[test]
fn failures_print_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = stderr_json(&privsim(d, &["optimize", "--config", "nope.toml"]));
    assert_eq!(missing["error"], "io_error");

    std::fs::write(d.join("bad.toml"), "design = \"in_study\"\nunknown_key = 1\n").unwrap();
    let bad = stderr_json(&privsim(d, &["optimize", "--config", "bad.toml"]));
    assert_eq!(bad["error"], "config_error");

    let no_run = stderr_json(&privsim(d, &["evaluate", "--run", "absent"]));
    assert_eq!(no_run["error"], "config_error");
    assert!(no_run["message"].as_str().unwrap().contains("absent"));
}

#[test]
fn cross_study_command_checks_design() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout_json(&privsim(d, &["synthesize", "--respondents", "3", "--questions", "4", "--out", "syn.json"]));
    std::fs::write(d.join("run.toml"), MOCK_CONFIG).unwrap();
    let err = stderr_json(&privsim(d, &["cross-study", "--config", "run.toml"]));
    assert_eq!(err["error"], "config_error");
}
