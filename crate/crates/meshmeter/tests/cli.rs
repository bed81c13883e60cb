use std::fs;
use std::process::Command;

use meshmeter_core::MeasurementRecord;

#[test]
fn linklab_writes_its_four_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenarios.json");
    fs::write(
        &scenario,
        r#"[{"name":"flat","forward_delay_ms":10,"n_probes":20},
            {"forward_delay_ms":30,"forward_jitter_ms":30,"n_probes":20,"seed":3}]"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_meshmeter-linklab"))
        .args([
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for f in [
        "validation.csv",
        "validation.txt",
        "boxplot.svg",
        "groundtruth.ndjson",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("validation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("flat,10,"), "{}", rows[0]);
}

#[test]
fn linklab_rejects_a_bad_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    fs::write(&scenario, r#"[{"forward_delay_ms":-1,"n_probes":5}]"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_meshmeter-linklab"))
        .args([
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn report_honours_order_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("export.ndjson");
    let mut text = String::new();
    for (a, b, rtt) in [
        ("a", "b", 30.0),
        ("b", "a", 31.0),
        ("a", "c", 45.0),
        ("c", "b", 80.0),
    ] {
        text.push_str(&MeasurementRecord::new(1_700_000_000_000, a, b, rtt).to_json_line());
        text.push('\n');
    }
    fs::write(&input, text).unwrap();
    let order = dir.path().join("order.txt");
    fs::write(&order, "c\nb\na\n").unwrap();
    let out = dir.path().join("report");
    let run = Command::new(env!("CARGO_BIN_EXE_meshmeter-report"))
        .args([
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threshold-ms",
            "40",
            "--order",
            order.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let csv = fs::read_to_string(out.join("heatmap_mean.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "reporter\\peer,c,b,a");
    let mesh: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mesh_report.json")).unwrap()).unwrap();
    assert_eq!(mesh["expected_directed_pairs"], 6);
    assert_eq!(mesh["observed_pairs"], 4);
    assert_eq!(mesh["threshold_ms"], 40.0);
    assert_eq!(mesh["pairs_under_threshold_mean"], 2);
    let svg = fs::read_to_string(out.join("heatmap_mean.svg")).unwrap();
    let red = svg
        .lines()
        .filter(|l| l.contains("class=\"cell") && l.contains("#d62728"))
        .count();
    assert_eq!(red, 2);
}

#[test]
fn report_reads_a_collector_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let rec = MeasurementRecord::new(1_700_000_000_000, "x", "y", 5.5);
    fs::write(
        data.join("records-2023-11-14.ndjson"),
        format!(
            "{{\"index\":0,\"received_at_ms\":1,\"record\":{}}}\n",
            rec.to_json_line().trim_end()
        ),
    )
    .unwrap();
    let out = dir.path().join("report");
    let run = Command::new(env!("CARGO_BIN_EXE_meshmeter-report"))
        .args([
            "--input",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let hist = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert!(!hist.is_empty());
    let mesh: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mesh_report.json")).unwrap()).unwrap();
    assert_eq!(mesh["observed_pairs"], 1);
}
