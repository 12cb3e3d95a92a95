use std::path::Path;
use std::process::{Command, Output};

fn ampmud(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampmud")).args(args).env("AMPMUD_THREADS", "1").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn se_prints_a_trajectory_table() {
    let o = ampmud(&["se", "--bits", "8", "--rate", "1", "--ebn0-db", "5", "--decoder", "rbs"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let header = text.lines().find(|l| l.trim_start().starts_with('t')).unwrap();
    assert!(header.contains("xi"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim_start().starts_with('t'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 31);
    assert!(rows.iter().all(|r| r[2] > 0.0 && r[2] <= 1.0));
    assert!(stderr(&o).contains("Eb/N0 = P/(2 K sigma^2)"));
}

#[test]
fn simulate_high_snr_has_no_errors() {
    let o = ampmud(&[
        "simulate",
        "--devices",
        "64",
        "--bits",
        "4",
        "--rate",
        "0.5",
        "--ebn0-db",
        "12",
        "--decoder",
        "bs",
        "--trials",
        "50",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("decoder,ebn0_db,rate,channel_uses"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "bs");
    assert_eq!(row[4], "50");
    assert_eq!(row[6], "0");
    assert_eq!(row[8], "0");
}

#[test]
fn missing_fields_exit_65_with_report() {
    let o = ampmud(&["simulate"]);
    assert_eq!(o.status.code(), Some(65));
    let err = stderr(&o);
    for field in ["--devices", "--bits", "--rate", "--ebn0-db", "--decoder", "--trials", "--seed"] {
        assert!(err.contains(field), "{err}");
    }
}

#[test]
fn invalid_values_exit_65() {
    let o = ampmud(&[
        "sweep",
        "--devices",
        "0",
        "--bits",
        "4",
        "--rate",
        "0.5",
        "--ebn0-db",
        "1,3,2",
        "--decoder",
        "bs",
        "--trials",
        "1",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(65));
    let err = stderr(&o);
    assert!(err.contains("system.devices"), "{err}");
    assert!(err.contains("sorted"), "{err}");
}

#[test]
fn unreadable_config_exits_65() {
    let o = ampmud(&["sweep", "--config", "/nonexistent/spec.json"]);
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn unknown_flag_exits_64() {
    let o = ampmud(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(ampmud(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(ampmud(&[]).status.code(), Some(64));
}

#[test]
fn help_documents_conventions_and_schemas() {
    let o = ampmud(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("Eb/N0 = P / (2 K sigma^2)"));
    assert!(text.contains("decoder,ebn0_db,target_pe,rate,channel_uses,ci_hi,feasible"));
    assert!(text.contains("t,xi_empirical_mean,xi_empirical_std,xi_analytical"));
    for cmd in ["simulate", "sweep", "frontier", "se", "mue-fig2", "validate"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn validate_passes() {
    let o = ampmud(&["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

fn data_rows(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn manifest_rerun_reproduces_csv() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let o = ampmud(&[
        "sweep",
        "--devices",
        "16",
        "--bits",
        "3",
        "--rate",
        "0.75",
        "--ebn0-db",
        "2,6",
        "--decoder",
        "rbs,bs",
        "--trials",
        "6",
        "--seed",
        "4",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = first.join("manifest.json");
    assert!(manifest.exists());
    let o = ampmud(&["sweep", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(data_rows(&first.join("sweep.csv")), data_rows(&second.join("sweep.csv")));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 4);
    assert_eq!(m["outputs"][0], "sweep.csv");
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"system": {"devices": 16, "bits": 3, "rate": 0.75, "ebn0_db": 6.0},
            "decoders": ["bs"], "sweep": {"kind": "EbN0Grid", "ebn0_db": [6.0]},
            "trials": 3, "master_seed": 1}"#,
    )
    .unwrap();
    let o = ampmud(&["sweep", "--config", spec.to_str().unwrap(), "--trials", "5", "--decoder", "rbs"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "rbs");
    assert_eq!(row[4], "5");
}

#[test]
fn infeasible_frontier_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampmud(&[
        "frontier",
        "--devices",
        "16",
        "--bits",
        "3",
        "--rate",
        "1,3",
        "--ebn0-db",
        "-5",
        "--decoder",
        "soft",
        "--trials",
        "4",
        "--seed",
        "2",
        "--target-pe",
        "0.001",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let frontier = std::fs::read_to_string(dir.path().join("frontier.csv")).unwrap();
    assert!(frontier.lines().nth(1).unwrap().ends_with(",false"));
    assert!(dir.path().join("points.csv").exists());
}

#[test]
fn mue_fig2_writes_one_csv_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampmud(&[
        "mue-fig2",
        "--devices",
        "16",
        "--bits",
        "4",
        "--rate",
        "1,0.5",
        "--ebn0-db",
        "6",
        "--decoder",
        "rbs",
        "--trials",
        "2",
        "--seed",
        "3",
        "--iterations",
        "6",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut csvs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs.len(), 2);
    let text = std::fs::read_to_string(dir.path().join(&csvs[0])).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,xi_empirical_mean,xi_empirical_std,xi_analytical");
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn se_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = ampmud(&[
        "se",
        "--bits",
        "4",
        "--rate",
        "0.5",
        "--ebn0-db",
        "6",
        "--decoder",
        "rbs,bs",
        "--iterations",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("se.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "trial_id,t,tau2_hat,mse,mue_hat");
    assert_eq!(text.lines().count(), 1 + 2 * 6);
    let manifest = dir.path().join("manifest.json");
    let again = dir.path().join("again");
    let o = ampmud(&["se", "--config", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(text, std::fs::read_to_string(again.join("se.csv")).unwrap());
}

#[test]
fn shipped_configs_are_valid() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&docs).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".json") && !name.contains("schema") {
            let spec = ampmud::harness::load_spec(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(spec.problems().is_empty(), "{name}: {:?}", spec.problems());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
