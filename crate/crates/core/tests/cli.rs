use std::path::Path;
use std::process::Command;

fn sas_sim(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sas-sim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SAS_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn passing_experiment_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = sas_sim(&["fluorescence"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("fluorescence/fluorescence_report.json")).unwrap();
    assert!(report.contains("\"schema\": \"sas-report/1\""));
    assert!(dir.path().join("fluorescence/fluorescence.csv").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("locked_brightness"));
}

#[test]
fn failing_criterion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flipped.conf");
    std::fs::write(&cfg, "format=sas-config/1\n[servo]\ninvert_polarity=true\n").unwrap();
    let o = sas_sim(
        &["--config", cfg.to_str().unwrap(), "--format", "csv", "lock"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final_phase_locked"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conf");
    let o = sas_sim(&["--config", missing.to_str().unwrap(), "sweep"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "format=sas-config/1\n[medium]\nwarp_factor=9\n").unwrap();
    let o = sas_sim(&["--config", bad.to_str().unwrap(), "sweep"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let o = sas_sim(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_trace_is_a_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = sas_sim(
        &["analyze", dir.path().join("absent.csv").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn analyze_round_trips_exported_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = sas_sim(&["sweep"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = dir.path().join("sweep/sweep_trace.csv");
    let o = sas_sim(&["--format", "csv", "analyze", csv.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("analyze/analyze_report.json").exists());
}
