use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn pqn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pqn"));
    c.env_remove("PQN_CONFIG").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    pqn().args(args).output().expect("binary runs")
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let text = format!(
        r#"
[source]
log_path = "{log}"

[nodes]
source_addr = "127.0.0.1:{s}"
closet_addr = "127.0.0.1:{c}"
time_scale = 0.0

[kiosk]
listen_addr = "127.0.0.1:{k}"
log_path = "{fallback}"
frame_hz = 0.0
"#,
        log = dir.join("results.jsonl").display(),
        fallback = dir.join("fallback.jsonl").display(),
        s = free_port(),
        c = free_port(),
        k = free_port(),
    );
    let path = dir.join("pqn.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn compensate_prints_converged_report() {
    let out = run(&["compensate", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["setting"]["paddles_deg"].as_array().unwrap().len(), 3);
}

#[test]
fn offline_outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    let drift = dir.path().join("drift.csv");
    let tomo = dir.path().join("tomo.csv");
    assert_eq!(run(&["sweep", "--v", "0.884", "--steps", "19", "--out", sweep.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["drift-trace", "--hours", "1", "--out", drift.to_str().unwrap()]).status.code(), Some(0));
    let t = run(&["tomography", "--settings", "36", "--out", tomo.to_str().unwrap()]);
    assert_eq!(t.status.code(), Some(0));

    let sweep = std::fs::read_to_string(sweep).unwrap();
    assert!(sweep.starts_with("delta_deg,s_value,sigma_s"));
    assert_eq!(sweep.lines().count(), 20);
    let drift = std::fs::read_to_string(drift).unwrap();
    assert_eq!(drift.lines().count(), 1 + 61 * 3);
    assert_eq!(std::fs::read_to_string(tomo).unwrap().lines().count(), 37);
    let summary: serde_json::Value = serde_json::from_slice(&t.stdout).unwrap();
    assert!(summary["fidelity"].as_f64().unwrap() > 0.85);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    assert_eq!(run(&["--config", "/nonexistent/pqn.toml", "compensate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[source]\nvisibility = 3.0\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "compensate"]).status.code(), Some(2));
    assert_eq!(run(&["tomography", "--settings", "16", "--out", out]).status.code(), Some(2));

    let cfg = write_config(dir.path());
    let r = run(&["--config", cfg.to_str().unwrap(), "run", "--a", "0", "--a-prime", "45"]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown = 1\n").unwrap();
    let out = pqn().env("PQN_CONFIG", &bad).args(["compensate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn spawn(cfg: &Path, cmd: &str) -> Daemon {
    Daemon(
        pqn()
            .args(["--config", cfg.to_str().unwrap(), cmd])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    )
}

fn run_session(cfg: &Path) -> Output {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let out = run(&["--config", cfg.to_str().unwrap(), "run", "--a", "0", "--a-prime", "45"]);
        if out.status.code() != Some(3) || Instant::now() > deadline {
            return out;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
}

#[test]
fn three_processes_run_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let _closet = spawn(&cfg, "closet-node");
    let _source = spawn(&cfg, "source-node");
    let _gateway = spawn(&cfg, "gateway");

    // the gateway falls back to the stored sweep until the source is up, so
    // retry until a live result arrives
    let deadline = Instant::now() + Duration::from_secs(20);
    let result = loop {
        let out = run_session(&cfg);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        if v["result"]["live"] == true || Instant::now() > deadline {
            break v;
        }
        std::thread::sleep(Duration::from_millis(100));
    };
    assert_eq!(result["result"]["live"], true);
    let s = result["result"]["s_value"].as_f64().unwrap();
    assert!((2.2..2.8).contains(&s), "S = {s}");

    let replay = run(&["replay-log", dir.path().join("results.jsonl").to_str().unwrap(), "--live", "true"]);
    assert_eq!(replay.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = String::from_utf8(replay.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["records"].as_array().unwrap().len(), 16);
    assert_eq!(lines[0]["session_id"], result["session_id"]);
}
