use std::path::Path;
use std::process::{Command, Output};

const SHORT: &[&str] = &["--horizon_s=20", "--warmup_s=90"];

fn simulate(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simulate"));
    cmd.args(args).env_remove("JUNCTIONSIM_OUT");
    if let Some(root) = out_env {
        cmd.env("JUNCTIONSIM_OUT", root);
    }
    cmd.output().expect("spawn simulate")
}

fn run_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run"];
    v.extend_from_slice(SHORT);
    v.extend_from_slice(extra);
    v
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = format!("--out_dir={}", dir.path().display());
    let o = simulate(&run_args(&[&out]), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "adaptation.csv", "timeseries.csv", "summary.csv", "series_MT_UL.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let echo = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "horizon_s=20"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = format!("--out_dir={}", dir.path().display());
    for bad in ["--cell.rb_count=0", "--no_such_key=1", "--thresholds.low=80", "--policy=bogus"] {
        let o = simulate(&run_args(&[&out, bad]), None);
        assert_eq!(code(&o), 2, "{bad}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = simulate(&["run", "--config", "/nonexistent/cfg.txt"], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn env_root_used_when_out_dir_unset() {
    let root = tempfile::tempdir().unwrap();
    let o = simulate(&run_args(&[]), Some(root.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written: Vec<_> = walk(root.path()).into_iter().filter(|p| p.ends_with("summary.csv")).collect();
    assert_eq!(written.len(), 1, "{written:?}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "# comment\nseed=5\npolicy=extra\nhorizon_s=10\n").unwrap();
    let out = dir.path().join("out");
    let out_flag = format!("--out_dir={}", out.display());
    let args = ["run", "--config", cfg.to_str().unwrap(), "--warmup_s=90", "--seed=9", &out_flag];
    let o = simulate(&args, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "seed=9"));
    assert!(echo.lines().any(|l| l == "policy=extra"));
    assert!(echo.lines().any(|l| l == "horizon_s=10"));
}

#[test]
fn replay_reproduces_adaptation_log() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let live = dir.path().join("live");
    let replay = dir.path().join("replay");
    let args = ["--horizon_s=200", "--warmup_s=90"];
    let trace_out = format!("--trace_out={}", trace.display());
    let live_out = format!("--out_dir={}", live.display());
    let o = simulate(&["run", args[0], args[1], &trace_out, &live_out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let replay_out = format!("--out_dir={}", replay.display());
    let o = simulate(&["replay-trace", "--trace-in", trace.to_str().unwrap(), args[0], args[1], &replay_out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read(live.join("adaptation.csv")).unwrap();
    let b = std::fs::read(replay.join("adaptation.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_trace_is_a_runtime_fault() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, "0,0,1\r\n250000,0,0\r\n").unwrap();
    let out = format!("--out_dir={}", dir.path().join("out").display());
    let o = simulate(&["replay-trace", "--trace-in", trace.to_str().unwrap(), SHORT[0], SHORT[1], &out], None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn matrix_writes_per_cell_dirs_and_summary() {
    let root = tempfile::tempdir().unwrap();
    let out = format!("--out_dir={}", root.path().display());
    let o = simulate(&["matrix", "--preset", "paper-repro", "--seeds", "2", SHORT[0], SHORT[1], &out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let base = root.path().join("paper-repro");
    let summary = std::fs::read_to_string(base.join("matrix_summary.csv")).unwrap();
    let header = summary.lines().next().unwrap();
    assert!(header.contains("per_user_throughput_se"));
    // 16 cells, 4 (class, direction) series each.
    assert_eq!(summary.lines().count(), 1 + 16 * 4);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(5) == Some("2")));
    let status = std::fs::read_to_string(base.join("status.csv")).unwrap();
    assert_eq!(status.lines().filter(|l| l.contains(",ok,")).count(), 32);
    let cell = base.join("s1-moderate-aggregator");
    assert!(cell.join("config.txt").is_file());
    assert!(cell.join("summary.csv").is_file());
    assert!(cell.join("seed-1").join("timeseries.csv").is_file());
    assert!(cell.join("seed-2").join("summary.csv").is_file());
}

#[test]
fn matrix_rejects_zero_seeds() {
    let o = simulate(&["matrix", "--preset", "paper-repro", "--seeds", "0"], None);
    assert_eq!(code(&o), 2);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
