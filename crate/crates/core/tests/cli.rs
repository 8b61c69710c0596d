//! End-to-end checks of the `polsense` command-line interface.

use std::process::Command;

fn polsense() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polsense"))
}

#[test]
fn simulate_writes_matching_binary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = polsense()
        .args(["simulate", "--preset", "mains-only", "--period-s", "1e-3", "--format", "both", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let record = polsense::fileio::read_sop_binary(&dir.path().join("sop.bin")).unwrap();
    let csv = polsense::fileio::read_sop_csv(&dir.path().join("sop.csv")).unwrap();
    assert_eq!(record.series.len(), 60_000);
    assert_eq!(record.series.len(), csv.len());
    for (a, b) in record.series.samples.iter().zip(&csv.samples) {
        assert_eq!(a.s.s1.to_bits(), b.s.s1.to_bits());
        assert_eq!(a.valid, b.valid);
    }
    for f in ["scenario.toml", "sop.svg", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn analyze_and_detect_consume_simulated_output() {
    let dir = tempfile::tempdir().unwrap();
    let status = polsense()
        .args(["simulate", "--preset", "mains-only", "--period-s", "1e-3", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());

    let analyzed = dir.path().join("analyzed");
    let status = polsense()
        .args(["analyze", "--notch", "--input"])
        .arg(dir.path().join("sop.bin"))
        .arg("--out")
        .arg(&analyzed)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["spectrogram_s1.csv", "spectrogram_s2.svg", "manifest.json"] {
        assert!(analyzed.join(f).exists(), "{f} missing");
    }

    let detected = dir.path().join("detected");
    let out = polsense()
        .args(["detect", "--input"])
        .arg(dir.path().join("sop.bin"))
        .arg("--out")
        .arg(&detected)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let alarms = std::fs::read_to_string(detected.join("alarms.csv")).unwrap();
    // the mains tone alone must not raise alarms
    assert_eq!(alarms.lines().count(), 1, "unexpected alarms:\n{alarms}");
    assert!(detected.join("baseline.json").exists());
}

#[test]
fn custom_scenario_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("custom.toml");
    let script = polsense::scenario::builtin_preset("mains-only").unwrap();
    std::fs::write(&scenario, polsense::scenario::serialize_scenario(&script)).unwrap();
    let status = polsense()
        .args(["simulate", "--period-s", "1e-2", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn invalid_scenario_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    std::fs::write(&scenario, "seed = 1\ntotal_duration_s = -5.0\nevents = []\n").unwrap();
    let out = polsense()
        .args(["simulate", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_preset_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = polsense()
        .args(["simulate", "--preset", "nonsense", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
