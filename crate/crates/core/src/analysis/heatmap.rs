use std::fmt::Write as _;

use super::pairs::{PairStats, PairStatsMap};
use super::AnalysisError;
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mean,
    P99,
}

impl Metric {
    pub fn value(self, s: &PairStats) -> f64 {
        match self {
            Metric::Mean => s.mean_ms,
            Metric::P99 => s.p99_ms,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mean => "mean",
            Metric::P99 => "p99",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Mean => "Mean RTT per directed pair [ms]",
            Metric::P99 => "99th percentile RTT per directed pair [ms]",
        }
    }
}

/// Cell classification, also written as the SVG `class` of each cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Diagonal,
    Missing,
    Under(f64),
    Over(f64),
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub nodes: Vec<String>,
    /// Row = reporter, column = peer.
    pub cells: Vec<Vec<Cell>>,
    pub svg: String,
    pub csv: String,
}

const CELL: f64 = 58.0;
const LABEL_W: f64 = 110.0;
const TOP: f64 = 90.0;

/// Renders an N x N heatmap of `metric` with rows as reporters.
///
/// Values strictly above `threshold_ms` are red; others sit on a sequential
/// ramp from 0 to the threshold. Missing pairs are hatched.
pub fn render_heatmap(
    stats: &PairStatsMap,
    metric: Metric,
    node_order: &[String],
    threshold_ms: f64,
) -> Result<Heatmap, AnalysisError> {
    for (rep, peer) in stats.keys() {
        for id in [rep, peer] {
            if !node_order.contains(id) {
                return Err(AnalysisError::UnknownNode(id.clone()));
            }
        }
    }

    let cells: Vec<Vec<Cell>> = node_order
        .iter()
        .map(|row| {
            node_order
                .iter()
                .map(|col| {
                    if row == col {
                        return Cell::Diagonal;
                    }
                    match stats.get(&(row.clone(), col.clone())) {
                        None => Cell::Missing,
                        Some(s) => {
                            let v = metric.value(s);
                            if v > threshold_ms {
                                Cell::Over(v)
                            } else {
                                Cell::Under(v)
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();

    let csv = to_csv(node_order, &cells);
    let svg = to_svg(node_order, &cells, metric, threshold_ms);
    Ok(Heatmap {
        nodes: node_order.to_vec(),
        cells,
        svg,
        csv,
    })
}

/// Header row of peer ids, then one row per reporter. Values use the shortest
/// round-trip float form; diagonal and missing cells are empty.
fn to_csv(nodes: &[String], cells: &[Vec<Cell>]) -> String {
    let mut out = String::from("reporter\\peer");
    for n in nodes {
        out.push(',');
        out.push_str(&csv_field(n));
    }
    out.push('\n');
    for (row, node) in cells.iter().zip(nodes) {
        out.push_str(&csv_field(node));
        for c in row {
            out.push(',');
            if let Cell::Under(v) | Cell::Over(v) = c {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn to_svg(nodes: &[String], cells: &[Vec<Cell>], metric: Metric, threshold_ms: f64) -> String {
    let n = nodes.len() as f64;
    let width = LABEL_W + CELL * n.max(1.0) + 30.0;
    let height = TOP + CELL * n.max(1.0) + 60.0;
    let mut doc = svg::Document::new(width, height);
    doc.def(
        "<pattern id=\"hatch\" width=\"8\" height=\"8\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\">\
<rect width=\"8\" height=\"8\" fill=\"#f0f0f0\"/><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"8\" stroke=\"#9a9a9a\" stroke-width=\"3\"/></pattern>",
    );
    doc.text(
        LABEL_W,
        24.0,
        "start",
        "font-size=\"15\" font-weight=\"bold\"",
        metric.title(),
    );
    doc.text(
        LABEL_W,
        44.0,
        "start",
        "font-size=\"11\"",
        &format!("rows: reporter, columns: peer; red: > {threshold_ms} ms; hatched: no data"),
    );

    for (j, col) in nodes.iter().enumerate() {
        let x = LABEL_W + CELL * (j as f64 + 0.5);
        doc.text(x, TOP - 8.0, "middle", "font-size=\"12\"", col);
    }
    for (i, (row, node)) in cells.iter().zip(nodes).enumerate() {
        let y = TOP + CELL * i as f64;
        doc.text(
            LABEL_W - 8.0,
            y + CELL / 2.0 + 4.0,
            "end",
            "font-size=\"12\"",
            node,
        );
        for (j, cell) in row.iter().enumerate() {
            let x = LABEL_W + CELL * j as f64;
            let (class, fill, label, dark) = match *cell {
                Cell::Diagonal => ("diag", "#ffffff".to_string(), None, false),
                Cell::Missing => ("missing", "url(#hatch)".to_string(), None, false),
                Cell::Over(v) => ("over", svg::RED.to_string(), Some(v), true),
                Cell::Under(v) => {
                    let t = if threshold_ms > 0.0 {
                        v / threshold_ms
                    } else {
                        1.0
                    };
                    ("under", svg::ramp(t), Some(v), t > 0.55)
                }
            };
            let _ = writeln!(
                doc.body,
                "<rect class=\"cell {class}\" data-row=\"{}\" data-col=\"{}\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\" stroke=\"#cccccc\"/>",
                svg::escape(node),
                svg::escape(&nodes[j]),
            );
            let cx = x + CELL / 2.0;
            let cy = y + CELL / 2.0 + 4.0;
            match (cell, label) {
                (_, Some(v)) => {
                    let color = if dark { "#ffffff" } else { "#111111" };
                    doc.text(
                        cx,
                        cy,
                        "middle",
                        &format!("font-size=\"12\" fill=\"{color}\""),
                        &format!("{v:.1}"),
                    );
                }
                (Cell::Missing, None) => {
                    doc.text(
                        cx,
                        cy,
                        "middle",
                        "font-size=\"9\" fill=\"#555555\"",
                        "no data",
                    );
                }
                _ => {}
            }
        }
    }

    // Ramp legend.
    let ly = TOP + CELL * n.max(1.0) + 20.0;
    let steps = 12;
    let lw = 14.0;
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            doc.body,
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"{lw}\" height=\"12\" fill=\"{}\"/>",
            LABEL_W + k as f64 * lw,
            svg::ramp(t)
        );
    }
    let _ = writeln!(
        doc.body,
        "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"{lw}\" height=\"12\" fill=\"{}\"/>",
        LABEL_W + steps as f64 * lw + 6.0,
        svg::RED
    );
    doc.text(LABEL_W, ly + 26.0, "start", "font-size=\"10\"", "0");
    doc.text(
        LABEL_W + steps as f64 * lw,
        ly + 26.0,
        "end",
        "font-size=\"10\"",
        &format!("{threshold_ms}"),
    );
    doc.text(
        LABEL_W + (steps + 1) as f64 * lw + 10.0,
        ly + 10.0,
        "start",
        "font-size=\"10\"",
        &format!("> {threshold_ms} ms"),
    );
    doc.finish()
}
