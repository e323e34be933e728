use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seeds = [3]
epochs = 2
train_days = 2
eval_days = 1
horizon = 24

[scenario]
clusters = 3

[algorithm.hyperparams]
batch_size = 8
update_interval = 16
train_every = 4
"#;

fn nanogrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanogrid")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_compare_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let base = dir.path().join("base");
    let ppo = dir.path().join("n_ppo");
    let out = nanogrid(&["train", "--config", s(&cfg), "--out", s(&base)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = nanogrid(&[
        "train",
        "--config",
        s(&cfg),
        "--algo",
        "ppo",
        "--action-space",
        "ut_res",
        "--out",
        s(&ppo),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("n_ppo: results"));
    assert!(ppo.join("seed-3/curve.csv").is_file());

    let out = nanogrid(&["evaluate", "--config", s(&cfg), "--algo", "n_ppo", "--out", s(&ppo)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cmp = dir.path().join("cmp");
    let out = nanogrid(&["compare", s(&base), s(&ppo), "--out", s(&cmp)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("arithmetic mean"));
    let out = nanogrid(&["report", s(&cmp)]);
    assert!(out.status.success());
    for f in ["cost.svg", "consumption.svg", "traded.svg", "rewards.svg", "report.md"] {
        assert!(cmp.join(f).is_file(), "{f}");
    }
}

#[test]
fn simulate_is_reproducible_and_gcn_flag_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = nanogrid(&["simulate", "--config", s(&cfg), "--seed", "9", "--out", s(d)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let trace = |d: &Path| fs::read(d.join("seed-9/trace.csv")).unwrap();
    assert_eq!(trace(&a), trace(&b));

    let g = dir.path().join("g");
    let out = nanogrid(&["train", "--config", s(&cfg), "--algo", "dqn", "--gcn", "--no-target-net", "--out", s(&g)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(g.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"method\": \"gcn_dqn\""));
    let effective = fs::read_to_string(g.join("config.toml")).unwrap();
    assert!(effective.contains("target_net = false"));
}

#[test]
fn synth_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let out = nanogrid(&["synth-data", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["generation.csv", "smp.csv", "appliances.csv", "config.toml"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let run = dir.path().join("from-files");
    let out = nanogrid(&["simulate", "--config", s(&data.join("config.toml")), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = nanogrid(&["train", "--config", s(&dir.path().join("none.toml"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "foo = 1\n").unwrap();
    let out = nanogrid(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("foo"));

    let cfg = small_config(dir.path());
    let out = nanogrid(&["train", "--config", s(&cfg), "--algo", "sarsa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown algorithm"));

    let out = nanogrid(&["train", "--action-space", "grid"]);
    assert_eq!(out.status.code(), Some(1));

    // An empty run directory is a runtime failure.
    let out = nanogrid(&["report", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));

    let out = nanogrid(&["evaluate", "--config", s(&cfg), "--algo", "dqn", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(nanogrid(&["--help"]).status.code(), Some(0));
}
