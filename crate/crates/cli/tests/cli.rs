use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn skylink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skylink")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, scenario: &str, seed: &str, duration: &str) {
    let o = skylink(&["simulate", "--scenario", scenario, "--seed", seed, "--duration", duration, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn replay_prints_reference_value() {
    let o = skylink(&["replay"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("|S| = 2.508"), "{}", stdout(&o));
}

#[test]
fn replay_reads_a_bell_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bell.csv");
    std::fs::write(&csv, "phi_a_deg,phi_b_deg,e,sigma\n0,22.5,-0.7,0.01\n0,67.5,0.7,0.01\n45,22.5,-0.7,0.01\n45,67.5,-0.7,0.01\n").unwrap();
    let o = skylink(&["replay", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("|S| = 2.800"), "{}", stdout(&o));
}

#[test]
fn scenarios_are_listed_and_printable() {
    let o = skylink(&["scenarios"]);
    assert_eq!(stdout(&o), "paper-144km\npaper-qkd\n");
    let o = skylink(&["scenarios", "--show", "paper-qkd"]);
    assert!(stdout(&o).contains("name = \"paper-qkd\""));
}

#[test]
fn zero_duration_gives_empty_streams() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "paper-144km", "1", "0");
    for f in ["alice.etag", "bob.etag"] {
        assert_eq!(std::fs::metadata(dir.path().join(f)).unwrap().len(), 24);
    }
    assert!(dir.path().join("truth.toml").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(d1.path(), "paper-144km", "5", "1.5");
    simulate(d2.path(), "paper-144km", "5", "1.5");
    for f in ["alice.etag", "bob.etag", "truth.toml"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
    let d3 = tempfile::tempdir().unwrap();
    simulate(d3.path(), "paper-144km", "6", "1.5");
    assert_ne!(std::fs::read(d1.path().join("bob.etag")).unwrap(), std::fs::read(d3.path().join("bob.etag")).unwrap());
}

#[test]
fn schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&skylink(&["scenarios", "--show", "paper-qkd"])).replacen("duration_s", "duration", 1);
    let line = text.lines().position(|l| l.starts_with("duration ")).unwrap() + 1;
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, text).unwrap();
    let o = skylink(&["simulate", "--scenario", file.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(&format!("line {line}")), "{}", stderr(&o));

    let o = skylink(&["simulate", "--scenario", "paper-qkd", "--duration=-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(code(&skylink(&["analyze"])), 2);
    assert_eq!(code(&skylink(&["analyze", "--mode", "nope", "--alice", "a", "--bob", "b"])), 2);
    let o = skylink(&["analyze", "--alice", "/nonexistent/a.etag", "--bob", "/nonexistent/b.etag"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("/nonexistent/a.etag"));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.etag");
    std::fs::write(&junk, b"not a tag file at all, really").unwrap();
    let o = skylink(&["analyze", "--alice", junk.to_str().unwrap(), "--bob", junk.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn analysis_modes_and_failure_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "paper-144km", "9", "25");
    let (a, b) = (path(d, "alice.etag"), path(d, "bob.etag"));
    let out = path(d, "rep");

    let o = skylink(&["analyze", "--alice", &a, "--bob", &b, "--mode", "bell", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("E(0°, 22.5°)"));
    let csv = std::fs::read_to_string(d.join("rep/bell.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(std::fs::read_to_string(d.join("rep/bell.toml")).unwrap().contains("abs_s"));

    let o = skylink(&["analyze", "--alice", &a, "--bob", &b, "--mode", "histogram", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let h = std::fs::read_to_string(d.join("rep/histogram.csv")).unwrap();
    assert!(h.starts_with("bin_center_s,count\n"));
    assert!(stdout(&o).contains("peak spacing"));

    // Bob's analyzers sit at 22.5°/67.5° here, so the sifted bits are noise
    let o = skylink(&["analyze", "--alice", &a, "--bob", &b, "--mode", "qkd"]);
    assert_eq!(code(&o), 6, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("raw key"));

    // streams of two different runs never lock
    let other = tempfile::tempdir().unwrap();
    simulate(other.path(), "paper-144km", "10", "12");
    let o = skylink(&["analyze", "--alice", &a, "--bob", &path(other.path(), "bob.etag")]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("confidence"), "{}", stderr(&o));
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn unreachable_peer_times_out() {
    let o = skylink(&["net", "--role", "bob", "--endpoint", &free_port(), "--duration", "0.2", "--timeout", "0.5"]);
    assert_eq!(code(&o), 7, "{}", stderr(&o));
}

#[test]
fn loopback_session_reports_like_offline_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "paper-144km", "12", "25");
    let (a, b) = (path(d, "alice.etag"), path(d, "bob.etag"));
    let offline = skylink(&["analyze", "--alice", &a, "--bob", &b]);
    assert_eq!(code(&offline), 0, "{}", stderr(&offline));

    for drop in ["0", "0.05"] {
        let endpoint = free_port();
        let alice = Command::new(env!("CARGO_BIN_EXE_skylink"))
            .args(["net", "--role", "alice", "--endpoint", &endpoint, "--input", &a, "--timeout", "60", "--batch-size", "512"])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let bob = skylink(&["net", "--role", "bob", "--endpoint", &endpoint, "--input", &b, "--drop-prob", drop, "--timeout", "60", "--batch-size", "512"]);
        let alice = alice.wait_with_output().unwrap();
        assert_eq!(code(&bob), 0, "{}", stderr(&bob));
        assert_eq!(code(&alice), 0, "{}", stderr(&alice));
        let report = stdout(&alice);
        assert!(report.ends_with(&stdout(&offline)), "online:\n{report}\noffline:\n{}", stdout(&offline));
        assert!(report.contains("handshake -> syncing -> locked"), "{report}");
        let retrans: u64 = stdout(&bob)
            .lines()
            .find_map(|l| l.strip_prefix("retransmissions"))
            .map(|v| v.trim().parse().unwrap())
            .unwrap();
        assert_eq!(retrans > 0, drop != "0", "{}", stdout(&bob));
        assert!(stdout(&bob).contains("coincidence rate"));
    }
}
