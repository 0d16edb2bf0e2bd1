use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gridtune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridtune")).args(args).output().unwrap()
}

/// Writes a configuration next to copies of the bundled network files.
fn config(dir: &Path, body: &str) -> PathBuf {
    for f in ["swing.toml", "swing_pid.toml", "five_bus_system.toml", "five_bus_spec.toml"] {
        std::fs::copy(configs().join(f), dir.join(f)).unwrap();
    }
    let path = dir.join("experiment.toml");
    std::fs::write(&path, format!("config-version = 1\n{body}")).unwrap();
    path
}

const TUNING: &str = r#"
[network]
system = "five_bus_system.toml"
specification = "five_bus_spec.toml"

[initial-gains]
system = { seed = 1, low = 0.0, high = 1.0 }
specification = { seed = 2, low = 0.0, high = 5.0 }
"#;

fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn invalid_configurations_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[simulation]\nhorizon = -1.0\n", "simulation.horizon"),
        ("[scenarios]\ncount = 0\n", "scenarios.count"),
        ("[simulation]\nsamples = 1\n", "simulation.samples"),
        ("[scenarios]\nbuses = [9]\n", "bus 9"),
        ("[unknown]\nx = 1\n", "unknown"),
    ];
    for (extra, needle) in cases {
        let cfg = config(dir.path(), &format!("{TUNING}{extra}"));
        let out = gridtune(&["distance", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(1), "{extra}: {err}");
        assert!(err.contains(needle), "{extra}: {err}");
    }
    let missing = gridtune(&["tune", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    let cfg = config(dir.path(), TUNING);
    let zero = gridtune(&["distance", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(zero.status.code(), Some(1));
    assert_eq!(gridtune(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gridtune(&["--help"]).status.code(), Some(0));
}

#[test]
fn undisturbed_simulation_stays_at_its_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[simulation]\nhorizon = 20.0\nsamples = 50\n\n[simulate]\nnetworks = [{ label = \"grid\", file = \"five_bus_system.toml\" }]\n",
    );
    let out = gridtune(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = table(&dir.path().join("simulate/grid.csv"));
    assert_eq!(header.len(), 1 + 15);
    assert_eq!(rows.len(), 50);
    for col in 1..header.len() {
        for r in &rows {
            assert!((r[col] - rows[0][col]).abs() < 1e-8, "{} drifts", header[col]);
        }
    }
    assert!(dir.path().join("simulate/frequency.svg").exists());
}

#[test]
fn load_step_reaches_the_expected_fixed_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fig2.toml");
    let out = gridtune(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = table(&dir.path().join("simulate/frequency.csv"));
    assert_eq!(header, ["t", "without PID.bus1.omega", "with PID.bus1.omega"]);
    let last = rows.last().unwrap();
    assert!((last[1] - 0.1).abs() < 1e-6);
    assert!(last[2].abs() < 1e-6);
    let svg = std::fs::read_to_string(dir.path().join("simulate/frequency.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("without PID"));
}

#[test]
fn steady_state_reports_every_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fig2.toml");
    let out = gridtune(&["steady-state", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("steady-state/with-pid.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("state,value\n"));
}

#[test]
fn identical_system_and_specification_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[network]
system = "five_bus_spec.toml"
specification = "five_bus_spec.toml"

[initial-gains]
system = { seed = 3, low = 0.0, high = 2.0 }
specification = { seed = 3, low = 0.0, high = 2.0 }

[scenarios]
count = 2

[simulation]
horizon = 10.0
samples = 40
"#;
    let cfg = config(dir.path(), body);
    let out = gridtune(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--scenario", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = table(&dir.path().join("compare/scenario-1.csv"));
    let buses = (header.len() - 1) / 2;
    assert_eq!(buses, 5);
    for r in &rows {
        for b in 1..=buses {
            assert!((r[b] - r[buses + b]).abs() < 1e-10);
        }
    }
    let d = gridtune(&["distance", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(d.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("distance.json")).unwrap()).unwrap();
    assert!(report["distance"].as_f64().unwrap() < 1e-10);
}

#[test]
fn tuning_writes_complete_results_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick.toml");
    let out = gridtune(&["tune", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["loss_history.csv", "manifest.json", "tuned_params.toml"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let (d0, d1) = (m["initial_distance"].as_f64().unwrap(), m["final_distance"].as_f64().unwrap());
    assert!(d1 <= d0);
    assert_eq!(m["scenarios"].as_array().unwrap().len(), 3);
    assert_eq!(m["system_gains"].as_array().unwrap().len(), 5);
    assert!(m["stop"].is_string());

    // the tuned file feeds straight back into compare
    let tuned = dir.path().join("tuned_params.toml");
    let cmp = gridtune(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--tuned",
        tuned.to_str().unwrap(),
        "--scenario",
        "2",
    ]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    assert!(dir.path().join("compare/scenario-2.svg").exists());
    let bad = gridtune(&["compare", "--config", cfg.to_str().unwrap(), "--scenario", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}
