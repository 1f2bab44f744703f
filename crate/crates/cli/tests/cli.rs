use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// A few-second variant of the label-skew scenario.
const SMALL: &[&str] = &[
    "trial.count=3",
    "trial.n0=30",
    "trial.n1=60",
    "formal.n=120",
    "select.steps=5",
    "fed.rounds=4",
];

fn wadmarket(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wadmarket"));
    cmd.arg("--config").arg(scenario("label_skew.cfg")).arg("--out").arg(out);
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn run_writes_artifacts_and_passes_audit() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&wadmarket(dir.path(), &["run"]));
    assert!(stdout.contains("audit: PASS"), "{stdout}");
    for f in ["records.jsonl", "report.csv", "curves.csv", "selection.json", "trajectory.csv", "formal.json", "audit.jsonl"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("run_id,p_0,p_1,p_2,n,w,v"));
    // 3 ratios at two budgets plus the formal run
    assert_eq!(lines.count(), 7);

    let audit = wadmarket(dir.path(), &["audit"]);
    assert_eq!(audit.status.code(), Some(0));
}

#[test]
fn records_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&wadmarket(a.path(), &["trial-runs"]));
    ok(&wadmarket(b.path(), &["trial-runs"]));
    let read = |d: &Path| std::fs::read(d.join("records.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(read(a.path()).split(|&c| c == b'\n').filter(|l| !l.is_empty()).count(), 6);
}

#[test]
fn stepwise_verbs_chain() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wadmarket(dir.path(), &["trial-runs"]));
    // resuming finds every record already present
    ok(&wadmarket(dir.path(), &["trial-runs"]));
    let fit = ok(&wadmarket(dir.path(), &["fit"]));
    assert!(fit.contains("combinewad") || fit.contains("r2"), "{fit}");
    ok(&wadmarket(dir.path(), &["select"]));
    ok(&wadmarket(dir.path(), &["formal-train"]));
    let projected = ok(&wadmarket(dir.path(), &["project", "--n", "240", "--target", "0.99"]));
    assert!(projected.contains("min_budget"), "{projected}");
    assert_eq!(wadmarket(dir.path(), &["audit"]).status.code(), Some(0));
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\n# comment\nfed.rounds = many\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wadmarket"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_records_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wadmarket(dir.path(), &["select"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trial-runs"));
}
