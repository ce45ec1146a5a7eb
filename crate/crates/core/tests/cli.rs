use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbm-auction"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn synthetic_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let out = bin(&[
            "synthetic", "--seed", "7", "--runs", "3", "--rounds", "800", "--k", "10",
            "--jobs", jobs, "--out", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [
        "trace_auction_ucb.csv",
        "trace_baseline_greedy.csv",
        "errors_auction_ucb.csv",
        "errors_baseline_greedy.csv",
        "summary.json",
        "instance.json",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let header = String::from_utf8(read(&a, "trace_auction_ucb.csv")).unwrap();
    assert!(header.starts_with("round,mean_regret_over_t,std_regret_over_t,smoothed_instant_regret\n"));
    let header = String::from_utf8(read(&a, "errors_auction_ucb.csv")).unwrap();
    assert!(header.starts_with("arm_id,n,abs_err,rel_err\n"));
}

#[test]
fn manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("first"), tmp.path().join("second"));
    let out = bin(&[
        "tail-demo", "--seed", "3", "--runs", "2", "--rounds", "600", "--beta", "0.4",
        "--alpha", "0.05", "--k", "12", "--out", first.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = first.join("manifest.json");
    let out = bin(&[
        "tail-demo", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["trace_guarded.csv", "trace_unguarded.csv", "summary.json", "instance.json"] {
        assert_eq!(read(&first, name), read(&second, name), "{name}");
    }
}

#[test]
fn replay_without_log_fails_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("never");
    let out = bin(&["replay", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("log_path"));
    assert!(!dir.exists());
}

#[test]
fn invalid_config_reports_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"synthetic": {"price_kind": "free"}}"#).unwrap();
    let out = bin(&["synthetic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synthetic.price_kind"));

    let out = bin(&["synthetic", "--runs", "0", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_check_on_reference_instance_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["bound-check", "--rounds", "10000", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&read(tmp.path(), "bound_report.json")).unwrap();
    assert_eq!(report["holds"], true);
    assert_eq!(report["checkpoints"].as_array().unwrap().len(), 5);
}

#[test]
fn gen_log_then_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let logs = tmp.path().join("logs");
    let cfg = tmp.path().join("gen.json");
    std::fs::write(&cfg, r#"{"log_gen": {"arms": 50, "rounds": 400}}"#).unwrap();
    let out = bin(&["gen-log", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", logs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = logs.join("auction_log.ndjson");
    let replay_dir = tmp.path().join("replay");
    let out = bin(&[
        "replay", "--log", log.to_str().unwrap(), "--runs", "2", "--out", replay_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&read(&replay_dir, "summary.json")).unwrap();
    assert!(summary["rounds"].as_u64().unwrap() > 0);
    assert_eq!(summary["policies"].as_array().unwrap().len(), 2);
}
