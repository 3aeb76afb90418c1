use std::path::{Path, PathBuf};
use std::process::Command;

use fractal_qos::capacity::CalibrationTable;
use fractal_qos::scenario::config::Method;
use fractal_qos::scenario::report::{write_report_csv, write_report_json};
use fractal_qos::scenario::{run_scenario, Report, ScenarioConfig};
use fractal_qos::Error;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn single(seeds: &[u64]) -> (ScenarioConfig, CalibrationTable) {
    let mut cfg = ScenarioConfig::load(&scenario("single_node.toml")).unwrap();
    cfg.seeds = seeds.to_vec();
    cfg.slots = 8 * cfg.window;
    let table = CalibrationTable::load(&cfg.table_path()).unwrap();
    (cfg, table)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fractal-qos"))
}

#[test]
fn reports_have_a_fixed_schema() {
    let (cfg, table) = single(&[1]);
    let res = run_scenario(&cfg, &table).unwrap();
    let report = Report {
        scenario: cfg.name.clone(),
        rows: vec![res.row],
    };
    let mut csv = Vec::new();
    write_report_csv(&report, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("method,utilization,loss_pct,jitter_ms,imbalance,compliant,seeds,windows")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "capacity_control");
    assert_eq!(row[6], "1");
    assert_eq!(row[7], "6");

    let mut json = Vec::new();
    write_report_json(&report, &mut json).unwrap();
    let text = String::from_utf8(json.clone()).unwrap();
    let fields = [
        "\"label\"",
        "\"methods\"",
        "\"seeds\"",
        "\"measured_windows\"",
        "\"utilization\"",
        "\"loss_pct\"",
        "\"jitter_ms\"",
        "\"imbalance\"",
        "\"classes\"",
    ];
    let at: Vec<usize> = fields.iter().map(|f| text.find(f).unwrap()).collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{text}");
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    let back: Report = serde_json::from_value(v).unwrap();
    assert_eq!(back, report);
}

#[test]
fn methods_see_the_same_offered_traffic() {
    let (cfg, table) = single(&[3]);
    let off = run_scenario(&cfg.with_methods(&[]), &table).unwrap();
    let on = run_scenario(&cfg.with_methods(&[Method::CapacityControl]), &table).unwrap();
    let gen = |r: &fractal_qos::scenario::report::ScenarioResult| {
        r.runs[0]
            .windows
            .iter()
            .map(|w| w.generated)
            .collect::<Vec<_>>()
    };
    assert_eq!(gen(&off), gen(&on));
    assert!(on.row.loss_pct <= off.row.loss_pct);
}

#[test]
fn invalid_configs_name_the_offending_field() {
    let text = std::fs::read_to_string(scenario("single_node.toml")).unwrap();
    let dir = scenario("");
    let cases = [
        ("slots = 16384", "slots = 3072", "slots"),
        (
            "rho_ref = 0.7",
            "rho_ref = 0.7\nreroute_margin = -1.0",
            "reroute_margin",
        ),
        (
            "rho_ref = 0.7",
            "rho_ref = 0.7\nmigration_margin = inf",
            "migration_margin",
        ),
        ("seeds = [1, 2, 3, 4, 5]", "seeds = []", "seeds"),
        (
            "server = \"s\"\nhurst = 0.85",
            "server = \"t\"\nhurst = 0.85",
            "flows[0].server",
        ),
    ];
    for (from, to, field) in cases {
        assert!(text.contains(from), "{from}");
        match ScenarioConfig::from_toml(&text.replacen(from, to, 1), &dir) {
            Err(Error::Config { path, .. }) => assert_eq!(path, field),
            other => panic!("{field}: {other:?}"),
        }
    }
    assert!(ScenarioConfig::from_toml(&format!("{text}\nbogus = 1\n"), &dir).is_err());
}

#[test]
fn strict_mode_fails_when_a_class_misses_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["compare", "--seed", "1", "--strict", "-o"])
        .arg(dir.path())
        .arg(scenario("reference.toml"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",false,")));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class bounds violated"));

    let missing = bin()
        .args(["simulate", "no-such-file.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn generate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let hq = dir.path().join("hq.csv");
    let g = bin()
        .args([
            "generate", "--hurst", "0.75", "--length", "4096", "--seed", "9", "--depth", "12", "-o",
        ])
        .arg(&trace)
        .status()
        .unwrap();
    assert!(g.success());
    let a = bin()
        .arg("analyze")
        .arg(&trace)
        .arg("--hq")
        .arg(&hq)
        .output()
        .unwrap();
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout).unwrap();
    for key in [
        "intensity_lambda",
        "hurst_h",
        "delta_h",
        "sigma_var",
        "window_len",
    ] {
        assert!(text.contains(key), "{text}");
    }
    let table = std::fs::read_to_string(&hq).unwrap();
    assert!(table.starts_with("q,h_q,r_squared"));
    assert!(table.lines().count() > 5);
}
