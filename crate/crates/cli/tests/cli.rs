use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stirring(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stirring"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn only_run(dir: &Path, experiment: &str) -> PathBuf {
    let runs: Vec<_> = std::fs::read_dir(dir.join(experiment)).unwrap().collect();
    assert_eq!(runs.len(), 1);
    runs.into_iter().next().unwrap().unwrap().path()
}

fn verdict(run: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(run.join("verdict.json")).unwrap()).unwrap()
}

#[test]
fn verify_writes_a_passing_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = stirring(
        &["verify", "--preset", "speed-change", "--outdir", "o"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let run = only_run(&tmp.path().join("o"), "verify");
    assert_eq!(verdict(&run)["pass"], true);
    for f in ["checks.csv", "resolved_config.json"] {
        assert!(run.join(f).exists());
    }
}

#[test]
fn she_targets_prints_the_mode_one_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = stirring(
        &["she-targets", "--modes", "1..2", "--t", "0.5"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.0126651"), "{text}");
    let csv = std::fs::read_to_string(
        only_run(&tmp.path().join("runs"), "she-targets").join("targets.csv"),
    )
    .unwrap();
    assert!(csv.starts_with("mode,t1,t2,quantity,value"));
}

#[test]
fn flow_and_entropy_commands_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = stirring(&["flow-scaling", "--d", "2", "--ells", "1..16"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let out = stirring(&["entropy", "--ns", "6,8", "--points", "20"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run(&tmp.path().join("runs"), "entropy");
    assert!(run.join("entropy_n8_a1_rho0.5_full.csv").exists());
    assert!(run.join("sweep.csv").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = stirring(&["simulate", "--config", "absent.toml"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));

    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\nsurprise = true\n").unwrap();
    let unknown = stirring(&["simulate", "--config", "bad.toml"], tmp.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("surprise"));

    let cfg = "[model]\nd = 1\nn = 16\nrho = 1.5\n[simulate]\nreplicas = 2\nsample_times = [0.1]\nobservables = []\n";
    std::fs::write(tmp.path().join("rho.toml"), cfg).unwrap();
    assert_eq!(
        stirring(&["simulate", "--config", "rho.toml"], tmp.path())
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        stirring(&["verify", "--preset", "voter"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        stirring(&["bg", "--a-n", "huge"], tmp.path()).status.code(),
        Some(2)
    );
}

#[test]
fn simulate_writes_resolved_config_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
seed = 5
outdir = "out"
[model]
d = 1
n = 16
rho = 0.5
a_n = 1.0
rates = "speed_change"
[initial]
kind = "pattern"
bits = "1100"
[simulate]
replicas = 4
sample_times = [0.01, 0.02]
observables = [{ kind = "fourier_cos", m = [1] }]
"#;
    std::fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let out = stirring(
        &["simulate", "--config", "c.toml", "--replicas", "6"],
        tmp.path(),
    );
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run(&tmp.path().join("out"), "simulate");
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["simulate"]["replicas"], 6);
    assert_eq!(resolved["model"]["a_n"], 1.0);
    assert_eq!(resolved["initial"]["kind"], "pattern");
    let traces = std::fs::read_to_string(run.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 1 + 6 * 2);
    assert_eq!(verdict(&run)["details"]["replicas"], 6);
}
