//! End-to-end runs of the `irsmec` binary.

use std::path::Path;
use std::process::{Command, Output};

fn irsmec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irsmec")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const INSTANCE: &str = r#"{
    "schema_version": 1,
    "params": { "num_devices": 2, "num_elements": 2 },
    "seed": 5,
    "case": "case2",
    "ma": "tdma",
    "ao": { "restarts": 1 }
}"#;

#[test]
fn solve_prints_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "i.json", INSTANCE);
    let trace = dir.path().join("t.csv");
    let out = irsmec(&["solve", &inst, "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sol: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(sol["objective_bits"].as_f64().unwrap() > 0.0);
    assert_eq!(sol["case"], "case2");
    let t = std::fs::read_to_string(trace).unwrap();
    assert!(t.starts_with("restart,iteration,objective_bits,kkt_residual_ra,kkt_residual_bf"));
}

#[test]
fn schema_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &INSTANCE.replace("\"seed\"", "\"sede\""));
    let out = irsmec(&["solve", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
    let scen = write(dir.path(), "s.json", r#"{"schema_version": 1, "sweep": {"axis": "N", "values": [2]}, "mc_realizations": 0, "benchmarks": ["no_irs"]}"#);
    let out = irsmec(&["sweep", &scen, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mc_realizations"));
}

#[test]
fn unreachable_rate_requirement_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = INSTANCE.replace("\"seed\": 5,", "\"seed\": 5, \"qos_min_bits\": [1e12, 1e12],");
    let inst = write(dir.path(), "q.json", &text);
    let out = irsmec(&["solve", &inst]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_ma_and_oracle_check_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "i.json", &INSTANCE.replace("\"num_elements\": 2", "\"num_elements\": 1"));
    let out = irsmec(&["compare-ma", &inst]);
    assert_eq!(out.status.code(), Some(0));
    let chain: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(chain["tdma"].as_array().unwrap().len(), 3);

    let out = irsmec(&["oracle-check", &inst, "--phase-levels", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["instance_hash"].as_str().unwrap().len(), 64);
    assert!(rep["passed"].as_bool().unwrap());
    assert!(rep["solver_bits"].as_f64().unwrap() >= rep["oracle_bits"].as_f64().unwrap() - rep["grid_slack"].as_f64().unwrap());
}

#[test]
fn activation_map_writes_csv() {
    let out = irsmec(&["activation-map", "--elements", "0,16", "--pe-dbm", "30:40:5", "--cycles", "400"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,P_E_dBm,C,h,threshold_dBm,tau1_s");
    assert_eq!(lines.len(), 1 + 2 * 3);
}

#[test]
fn repeated_sweeps_are_identical_up_to_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(
        dir.path(),
        "s.json",
        r#"{"schema_version": 1, "params": {"num_devices": 2}, "sweep": {"axis": "PE", "values": [35, 40]},
            "mc_realizations": 2, "schemes": [{"case": "case1", "ma": "tdma"}], "benchmarks": ["local_only"],
            "ao": {"restarts": 1}, "seed_base": 3}"#,
    );
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = irsmec(&["sweep", &scen, "-o", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let rows: String = std::fs::read_to_string(out_dir.join("runs.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
            .collect();
        runs.push((rows, std::fs::read_to_string(out_dir.join("summary.csv")).unwrap()));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["fixed_wpt_tau0_s"], 0.5);
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].0.lines().count(), 1 + 2 * 2 * 2);
}
