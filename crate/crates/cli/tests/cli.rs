use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn copy_corpus(name: &str, to: &Path) -> PathBuf {
    let dir = to.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    for entry in std::fs::read_dir(fixtures().join(name)).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, dir.join(p.file_name().unwrap())).unwrap();
    }
    dir
}

fn akira(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akira")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn clean_file_exits_zero_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = copy_corpus("corpus", tmp.path());
    let out = akira(&["repair", arg(&dir.join("clean.rs"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("q_f after 1 transitions"), "{stdout}");
    assert!(dir.join("clean.trace.json").exists());
    assert!(dir.join("clean.repaired.rs").exists());
}

#[test]
fn failed_repair_exits_one_with_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = copy_corpus("corpus", tmp.path());
    let out = akira(&["repair", arg(&dir.join("never_fixes.rs"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max transitions"));
    assert!(!dir.join("never_fixes.repaired.rs").exists());
}

#[test]
fn flags_change_the_session() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = copy_corpus("corpus", tmp.path());
    let spike = dir.join("spike.rs");
    assert_eq!(akira(&["repair", arg(&spike)]).status.code(), Some(0));
    assert_eq!(akira(&["repair", arg(&spike), "--no-rollback"]).status.code(), Some(1));

    let out = akira(&["repair", arg(&dir.join("never_fixes.rs")), "--max-transitions", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("after 3 transitions"));

    // flags override the config file
    let conf = tmp.path().join("akira.conf");
    std::fs::write(&conf, "max_transitions = 2\n").unwrap();
    let out = akira(&["repair", arg(&dir.join("never_fixes.rs")), "--config", arg(&conf)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("after 2 transitions"));
    let out = akira(&[
        "repair",
        arg(&dir.join("never_fixes.rs")),
        "--config",
        arg(&conf),
        "--max-transitions",
        "4",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("after 4 transitions"));
}

#[test]
fn corpus_mode_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = copy_corpus("corpus", tmp.path());
    let traces = tmp.path().join("traces");
    let out = akira(&["repair", arg(&dir), "--parallel", "4", "--trace-dir", arg(&traces)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("never_fixes"), "{stdout}");
    let report = std::fs::read_to_string(traces.join("report.json")).unwrap();
    assert!(report.contains("\"exec_rate\": 0.75"), "{report}");
    assert!(traces.join("spike.trace.json").exists());
}

#[test]
fn experiment_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = copy_corpus("experiment", tmp.path());
    let out = akira(&["repair", arg(&dir), "--experiment", "pipelines"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["low-temp", "high-temp", "high-temp+rollback"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    assert!(dir.join("experiment/experiment.json").exists());
}

#[test]
fn usage_and_io_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        akira(&["repair", arg(&tmp.path().join("missing.rs"))]).status.code(),
        Some(2)
    );
    assert_eq!(akira(&["repair", arg(tmp.path())]).status.code(), Some(2));
    assert_eq!(akira(&["repair"]).status.code(), Some(2));
    assert_eq!(
        akira(&["repair", "x.rs", "--provider", "pigeon"]).status.code(),
        Some(2)
    );
    assert_eq!(akira(&["repair", "x.rs", "--temperature", "5"]).status.code(), Some(2));

    let dir = copy_corpus("corpus", tmp.path());
    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "this is not a pair\n").unwrap();
    assert_eq!(
        akira(&["repair", arg(&dir.join("clean.rs")), "--config", arg(&bad)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        akira(&["repair", arg(&dir.join("clean.rs")), "--experiment", "pipelines"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(akira(&["--help"]).status.code(), Some(0));
}
