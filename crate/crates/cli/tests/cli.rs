use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexgrid"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn flexgrid")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn simulate_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("static_di_12.toml");
    let o = run(
        &["simulate", scn.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(dir.path().join("static_di_12.csv")).unwrap();
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("static_di_12.json")).unwrap()).unwrap();

    let nadir = report["metrics"]["nadir"].as_f64().unwrap();
    let col = column(&csv, "f_coi_hz");
    let min = col
        .iter()
        .min_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()))
        .unwrap();
    assert_eq!(*min, format!("{nadir:.6}"));
    assert_eq!(col.len(), report["samples"].as_u64().unwrap() as usize);

    // Defaults appear in the report so the run can be repeated from it.
    let sys = &report["config"]["system"];
    assert_eq!(sys["dt_s"].as_f64(), Some(0.01));
    assert_eq!(sys["duration_s"].as_f64(), Some(60.0));
    assert_eq!(sys["reserves"].as_str(), Some("default"));
    assert_eq!(sys["reserve_products"].as_array().unwrap().len(), 6);
    assert_eq!(report["config"]["target_bus"].as_u64(), Some(8));
    assert_eq!(report["config"]["attack"]["t_start"].as_f64(), Some(1.0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("switching_di_8.toml");
    let mut traces = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = run(
            &["simulate", scn.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--duration", "20"],
            dir.path(),
        );
        assert_eq!(code(&o), 0);
        traces.push(fs::read(out.join("switching_di_8.trace.csv")).unwrap());
        assert!(out.join("switching_di_8.report.json").exists());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn missing_key_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "broken.toml",
        "[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\n",
    );
    let o = run(&["simulate", "broken.toml"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("broken.toml") && err.contains("t_start"), "{err}");
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn unknown_key_names_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "colour.toml",
        "[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\ncolour = \"red\"\n",
    );
    let o = run(&["simulate", "colour.toml"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("colour.toml:6:") && err.contains("colour"), "{err}");
}

#[test]
fn negative_interval_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "p.toml",
        "[attack]\nfamily = \"periodic\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\ninterval = -4\ncount = 2\n",
    );
    let o = run(&["simulate", "p.toml"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("p.toml:6:") && err.contains("interval") && err.contains("positive"), "{err}");
}

#[test]
fn runaway_supply_is_instability_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "runaway.toml",
        "[attack]\nfamily = \"static\"\ntype = \"SI\"\nmagnitude_pct = 300\nt_start = 1\n",
    );
    let o = run(&["simulate", "runaway.toml", "--reserves", "off"], dir.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["runaway.toml".to_string()]);
}

#[test]
fn overloaded_power_flow_is_divergence() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["powerflow", "--load-scale", "10"], dir.path())), 3);
    let o = run(&["powerflow", "--json"], dir.path());
    assert_eq!(code(&o), 0);
    let pf: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(pf["iterations"].as_u64().unwrap() <= 10);
}

#[test]
fn magnitude_sweep_reports_negative_slope() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("static_di_8.toml");
    let o = run(
        &[
            "sweep",
            "--magnitudes",
            "4,6,8,9.4,12,14",
            scn.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("static_di_8.report.json")).unwrap()).unwrap();
    let slope = report["result"]["magnitudes"]["slope"].as_f64().unwrap();
    assert!((slope + 0.06).abs() <= 0.012, "slope {slope}");
}

#[test]
fn timing_sweep_needs_switching_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("static_di_8.toml");
    let o = run(&["sweep", "--timings", "3,4", scn.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);

    let scn = scenarios().join("switching_di_8.toml");
    let o = run(
        &[
            "sweep",
            "--timings",
            "3,6,9,12",
            scn.to_str().unwrap(),
            "--duration",
            "30",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("switching_di_8.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["result"]["timings"]["points"].as_array().unwrap().len(), 4);
}

#[test]
fn seedless_takes_no_value() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["feasibility", "1400", "2025", "--seedless=1"], dir.path())), 2);
    assert_eq!(code(&run(&["feasibility", "1400", "2025", "--seedless"], dir.path())), 0);
}

#[test]
fn feasibility_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["feasibility", "1400", "2025"], dir.path());
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["feasible"], Value::Bool(true));
    let o = run(&["feasibility", "9000", "2030"], dir.path());
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["feasible"], Value::Bool(false));
    assert_eq!(code(&run(&["feasibility", "1400", "2040"], dir.path())), 2);
}

#[test]
fn target_bus_without_load_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("static_di_8.toml");
    let o = run(&["simulate", scn.to_str().unwrap(), "--target-bus", "4"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn calibrate_from_anchor_file() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "anchors.toml",
        "[[anchor]]\npercent = 12.0\nsettled = 49.8\n",
    );
    let o = run(
        &["calibrate", "--anchors", "anchors.toml", "--reserves", "off", "--duration", "30"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("calibration.json")).unwrap()).unwrap();
    let params = &r["params"];
    assert!(params["r_droop"].as_f64().unwrap() >= 0.02);
    assert!(params["objective_residual"].as_f64().unwrap() < 0.01);

    write(dir.path(), "bad.toml", "[[anchor]]\npercent = 12.0\nheight = 3\n");
    assert_eq!(code(&run(&["calibrate", "--anchors", "bad.toml"], dir.path())), 2);
}

#[test]
fn every_bundled_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        n += 1;
        let o = run(
            &["simulate", path.to_str().unwrap(), "--duration", "2", "--out-dir", dir.path().to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
    }
    assert!(n >= 15);
}
