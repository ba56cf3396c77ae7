use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

fn copper() -> Command {
    Command::new(env!("CARGO_BIN_EXE_copper"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
  "name": "maze-small",
  "mode": "restricted",
  "app": "maze-like",
  "maxJobsGrid": [12, 20],
  "exploitationLevels": [0.0, 1.0],
  "runsPerCell": 8,
  "resamples": 200,
  "seed": 5
}"#;

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_experiment_writes_reproducible_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let done = copper().args(["run-experiment", "--config"]).arg(&config).arg("--out").arg(&out).output().unwrap();
        assert!(done.status.success(), "{}", String::from_utf8_lossy(&done.stderr));
        outputs.push(read_dir_sorted(&out.join("maze-small")));
    }
    assert_eq!(outputs[0], outputs[1]);
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"summary.json") && names.contains(&"cells.csv") && names.contains(&"records.csv"));
    assert!(names.contains(&"maze-like_max12_ex0.00.csv"));
    let cells = String::from_utf8(outputs[0].iter().find(|(n, _)| n == "cells.csv").unwrap().1.clone()).unwrap();
    assert_eq!(cells.lines().count(), 1 + 4);

    // Rebuilding from the records reproduces the written tables.
    let dir = tmp.path().join("a").join("maze-small");
    let before = read_dir_sorted(&dir);
    let out = copper().args(["report", "--in"]).arg(&dir).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("maze-like_max20_ex1.00"));
    assert_eq!(read_dir_sorted(&dir), before);
}

#[test]
fn invalid_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#"{"mode":"restricted","app":"maze-like"}"#);
    let out = copper().args(["run-experiment", "--config"]).arg(&config).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("maxJobsGrid"));

    let out = copper().args(["report", "--in"]).arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("records.csv"));

    let out = copper().args(["adapter", "--kind", "nope"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn serve_honours_environment() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let data = tempfile::tempdir().unwrap();
    let mut child = copper()
        .arg("serve")
        .env("COPPER_PORT", port.to_string())
        .env("COPPER_DATA_DIR", data.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}/healthz");
    let rt = tokio::runtime::Runtime::new().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let ok = rt.block_on(async {
        loop {
            if let Ok(r) = reqwest::get(&url).await {
                return r.status().is_success();
            }
            if Instant::now() > deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(ok, "service did not come up on COPPER_PORT");
}
