//! End-to-end CLI contract tests: exit codes, diagnostics, output files.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdalign"))
}

#[test]
fn unknown_config_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochz = 10\n").unwrap();
    let data = dir.path().join("d.txt");
    std::fs::write(&data, "pda-features v1 dim=1 classes=2\ns,0,0.5\nt,?,0.5\n").unwrap();
    let out = bin()
        .arg("train")
        .args(["--data"])
        .arg(&data)
        .args(["--out"])
        .arg(dir.path().join("run"))
        .args(["--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epochz"), "stderr: {stderr}");
}

#[test]
fn malformed_data_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    std::fs::write(
        &data,
        "pda-features v1 dim=3 classes=4\ns,0,1.0,2.0,3.0\ns,1,1.0,2.0\n",
    )
    .unwrap();
    let out = bin()
        .arg("train")
        .args(["--data"])
        .arg(&data)
        .args(["--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["train", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("train")
        .args(["--data", "/nonexistent/data.txt", "--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_check_passes_and_prints_error() {
    let out = bin().args(["grad-check", "--seed", "7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "stdout: {stdout}");
    assert!(stdout.contains("PASS"), "stdout: {stdout}");
}

#[test]
fn eval_without_labels_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    // Train on tiny labeled data, then evaluate against an unlabeled copy.
    let data_dir = dir.path().join("data");
    assert!(bin()
        .args(["gen-data", "--out"])
        .arg(&data_dir)
        .args(["--samples-per-class", "5", "--seed", "2"])
        .status()
        .unwrap()
        .success());
    let run_dir = dir.path().join("run");
    assert!(bin()
        .arg("train")
        .arg("--data")
        .arg(data_dir.join("data.txt"))
        .arg("--out")
        .arg(&run_dir)
        .args(["--desk", "--epochs", "2"])
        .status()
        .unwrap()
        .success());
    // Strip evaluation labels from the target rows.
    let text = std::fs::read_to_string(data_dir.join("data.txt")).unwrap();
    let unlabeled: String = text
        .lines()
        .map(|l| {
            if let Some(rest) = l.strip_prefix("t,") {
                let features = rest.split_once(',').map(|(_, f)| f).unwrap_or("");
                format!("t,?,{features}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let unlabeled_path = dir.path().join("unlabeled.txt");
    std::fs::write(&unlabeled_path, unlabeled).unwrap();
    let out = bin()
        .arg("eval")
        .arg("--model")
        .arg(run_dir.join("model.json"))
        .arg("--data")
        .arg(&unlabeled_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("evaluation"), "stderr: {stderr}");
}

#[test]
fn sweep_emits_plot_ready_table() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    assert!(bin()
        .args(["gen-data", "--out"])
        .arg(&data_dir)
        .args(["--samples-per-class", "6", "--seed", "3"])
        .status()
        .unwrap()
        .success());
    let sweep_dir = dir.path().join("sweep");
    assert!(bin()
        .arg("sweep")
        .arg("--data")
        .arg(data_dir.join("data.txt"))
        .arg("--out")
        .arg(&sweep_dir)
        .args(["--param", "gamma", "--values", "0,0.5,1", "--desk", "--epochs", "2", "--jobs", "2"])
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "gamma,accuracy");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let (value, acc) = row.split_once(',').unwrap();
        let v: f64 = value.parse().unwrap();
        let a: f64 = acc.parse().unwrap();
        assert!(v.is_finite() && a.is_finite());
    }
    assert!(sweep_dir.join("manifest.json").exists());
}
