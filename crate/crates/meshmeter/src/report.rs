use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use meshmeter_collector::{CollectorClient, ExportFilter};
use meshmeter_core::analysis::{
    self, histogram, mesh_report, pair_stats_with_threshold, render_heatmap, Heatmap, Histogram,
    MeshReport, Metric,
};
use meshmeter_core::MeasurementRecord;
use serde_json::Value;

/// Everything `write_report` put on disk, for callers that want to inspect
/// it without reparsing.
#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub nodes: Vec<String>,
    pub histogram: Histogram,
    pub mean: Heatmap,
    pub p99: Heatmap,
    /// `None` when fewer than two nodes are known.
    pub mesh: Option<MeshReport>,
}

/// Parses NDJSON holding either bare records (the export format) or stored
/// entries with the record under `record` (the collector's segment files).
pub fn parse_records(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut v: Value = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        if let Some(inner) = v.get_mut("record") {
            v = inner.take();
        }
        let rec = MeasurementRecord::from_value(v).with_context(|| format!("line {}", i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads records from a collector base URL or from disk. On disk the input is
/// an export file or a collector data directory (every `.ndjson` file in name order).
pub async fn load_records(input: &str) -> Result<Vec<MeasurementRecord>> {
    if input.starts_with("http://") || input.starts_with("https://") {
        let client = CollectorClient::new(input);
        return client
            .export(&ExportFilter::default())
            .await
            .map_err(|e| anyhow::anyhow!("export from {input}: {e}"));
    }
    let path = Path::new(input);
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        files.sort();
        let mut all = Vec::new();
        for f in files {
            let text = fs::read_to_string(&f).with_context(|| f.display().to_string())?;
            all.extend(parse_records(&text).with_context(|| f.display().to_string())?);
        }
        return Ok(all);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {input}"))?;
    parse_records(&text)
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn parse_order(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Writes every report artifact into `out`.
///
/// Nodes follow `order` when given, else lexicographic over every id seen.
/// An explicit order must name every id in the records.
pub fn write_report(
    records: &[MeasurementRecord],
    out: &Path,
    threshold_ms: f64,
    order: Option<Vec<String>>,
) -> Result<ReportOutput> {
    if !(threshold_ms.is_finite() && threshold_ms > 0.0) {
        bail!("threshold must be a positive number of ms, got {threshold_ms}");
    }
    fs::create_dir_all(out)?;
    let nodes = order.unwrap_or_else(|| analysis::node_ids(records));

    let hist = histogram(records);
    fs::write(out.join("histogram.csv"), hist.to_csv())?;
    fs::write(out.join("histogram.svg"), hist.to_svg(threshold_ms))?;

    let stats = pair_stats_with_threshold(records, threshold_ms);
    let mean = render_heatmap(&stats, Metric::Mean, &nodes, threshold_ms)?;
    let p99 = render_heatmap(&stats, Metric::P99, &nodes, threshold_ms)?;
    for (name, map) in [("heatmap_mean", &mean), ("heatmap_p99", &p99)] {
        fs::write(out.join(format!("{name}.svg")), &map.svg)?;
        fs::write(out.join(format!("{name}.csv")), &map.csv)?;
    }

    let mesh = match mesh_report(records, &nodes, threshold_ms) {
        Ok(m) => Some(m),
        Err(analysis::AnalysisError::TooFewNodes(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let json = match &mesh {
        Some(m) => serde_json::to_value(m)?,
        None => serde_json::json!({ "nodes": nodes, "error": "fewer than two nodes" }),
    };
    fs::write(
        out.join("mesh_report.json"),
        serde_json::to_string_pretty(&json)? + "\n",
    )?;

    Ok(ReportOutput {
        nodes,
        histogram: hist,
        mean,
        p99,
        mesh,
    })
}
