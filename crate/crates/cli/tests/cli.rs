use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deep-hybrid"))
}

fn short_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("short.toml");
    std::fs::write(&path, "[env]\nmax_steps = 40\n").unwrap();
    path
}

#[test]
fn run_writes_tables_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--condition", "ball", "--trials", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 10);
    for f in ["trials.csv", "summary.csv", "accuracy.svg", "time.svg", "error.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn trace_reports_the_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("trace");
    let o = bin()
        .args(["trace", "--seed", "4", "--frame-every", "20", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("success="));
    assert!(out.join("frames/frame_00040.svg").exists());
}

#[test]
fn validate_config_prints_filled_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = bin().arg("validate-config").arg(&cfg).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("max_steps = 40"));
    assert!(text.contains("attractor_gain"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[agent]\ndt = 0.0\n").unwrap();
    let o = bin().arg("validate-config").arg(&bad).output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error:"));
    let o = bin().args(["run", "--condition", "sideways"]).output().unwrap();
    assert!(!o.status.success());
}
