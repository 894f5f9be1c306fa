use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_quota-lab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("QUOTA_LAB_THREADS", t),
        None => cmd.env_remove("QUOTA_LAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.ini");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_SWEEP: &str = "[experiment]\ntrials = 2\n[env]\nchains = chain1\nlengths = 3, 4\n[agent]\nalgorithms = qlearning, quota\n";

#[test]
fn version() {
    let out = run(&["version"], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("quota-lab "));
}

#[test]
fn chain_sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = run(&["chain-sweep", "--config", &cfg, "--out", a.to_str().unwrap()], Some("1"));
    let rb = run(&["chain-sweep", "--config", &cfg, "--out", b.to_str().unwrap()], Some("2"));
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(rb.status.success());
    let x = std::fs::read(a.join("chain_sweep.csv")).unwrap();
    let y = std::fs::read(b.join("chain_sweep.csv")).unwrap();
    assert_eq!(x, y);
    // 2 lengths x 2 algorithms x (2 detail + 1 summary) + header
    assert_eq!(String::from_utf8(x).unwrap().lines().count(), 1 + 4 * 3);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let out = dir.path().join("o");
    let r = run(
        &["chain-sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "1", "--seed", "5", "--override", "env.lengths=3"],
        Some("1"),
    );
    assert!(r.status.success());
    let text = std::fs::read_to_string(out.join("chain_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[agent]\nalpha = -0.5\n");
    let r = run(&["chain-sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()], Some("1"));
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("agent.alpha"));

    let r = run(&["chain-sweep", "--override", "agent.nonsense=1"], Some("1"));
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("agent.nonsense"));

    let r = run(&["chain-sweep", "--config", "/nonexistent/exp.ini"], Some("1"));
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["chain-sweep", "--trials", "0"], Some("1"));
    assert_eq!(r.status.code(), Some(2));

    let r = run(&["chain-sweep"], Some("zero"));
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("QUOTA_LAB_THREADS"));

    let r = run(&["train", "--trials", "3"], None);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_abort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let r = run(&["chain-sweep", "--config", &cfg, "--out", blocker.join("x").to_str().unwrap()], Some("1"));
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn train_zero_budget_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let r = run(&["train", "--out", out.to_str().unwrap(), "--override", "agent.step_budget=0"], None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(), 1);
    assert!(out.join("option_head.snapshot").exists());

    let out = dir.path().join("d");
    let r = run(
        &["train", "--out", out.to_str().unwrap(), "--override", "agent.learning_rate=1e300", "--override", "agent.step_budget=100000"],
        None,
    );
    assert_eq!(r.status.code(), Some(3));
    assert!(out.join("train_log.csv").exists());
}

#[test]
fn grad_check_passes() {
    let r = run(&["grad-check", "--trials", "20"], None);
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 4);
}

#[test]
fn oracle_writes_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&["oracle", "--out", dir.path().to_str().unwrap()], None);
    assert!(r.status.success());
    let text = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert!(text.starts_with("baseline,mean_return,episodes\n"));
    assert_eq!(text.lines().count(), 3);
}
