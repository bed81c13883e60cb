use std::fmt::Write as _;

use super::validation::ValidationReport;
use crate::analysis::Summary;
use crate::svg;

pub struct ValidationArtifacts {
    pub table: String,
    pub csv: String,
    pub boxplot_svg: String,
}

pub const CSV_HEADER: &str = "scenario,forward_delay_ms,forward_jitter_ms,reverse_delay_ms,reverse_jitter_ms,loss_prob,n_probes,n_samples,status,\
measured_mean_ms,truth_mean_ms,mean_delta_ms,delta_p95_ms,\
measured_min_ms,measured_q1_ms,measured_median_ms,measured_q3_ms,measured_max_ms,\
truth_min_ms,truth_q1_ms,truth_median_ms,truth_q3_ms,truth_max_ms,final_jitter_ms";

/// Renders a batch of reports, one row per report in the given order.
pub fn render_validation(reports: &[ValidationReport]) -> ValidationArtifacts {
    ValidationArtifacts {
        table: table(reports),
        csv: csv(reports),
        boxplot_svg: boxplot(reports),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn five(s: Option<&Summary>) -> [Option<f64>; 5] {
    match s {
        Some(s) => [
            Some(s.min),
            Some(s.q1),
            Some(s.median),
            Some(s.q3),
            Some(s.max),
        ],
        None => [None; 5],
    }
}

fn csv(reports: &[ValidationReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let l = &r.link;
        let mut fields = vec![
            csv_field(&r.name),
            l.forward_delay_ms.to_string(),
            l.forward_jitter_ms.to_string(),
            l.reverse_delay_ms.to_string(),
            l.reverse_jitter_ms.to_string(),
            l.loss_prob.to_string(),
            r.n_probes.to_string(),
            r.samples.len().to_string(),
            if r.no_samples() { "no_samples" } else { "ok" }.to_string(),
            opt(r.measured.map(|m| m.mean)),
            opt(r.truth.map(|t| t.mean)),
            opt(r.mean_delta_ms),
            opt(r.delta_p95_ms),
        ];
        fields.extend(five(r.measured.as_ref()).map(opt));
        fields.extend(five(r.truth.as_ref()).map(opt));
        fields.push(r.final_jitter_ms.to_string());
        out.push_str(&fields.join(","));
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

fn table(reports: &[ValidationReport]) -> String {
    let header = [
        "scenario",
        "delay",
        "jitter",
        "loss",
        "n",
        "measured mean",
        "truth mean",
        "delta mean",
        "delta p95",
        "measured Q1/Q2/Q3",
        "truth Q1/Q2/Q3",
        "jitter est",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let q = |s: &Option<Summary>| {
            s.map(|s| format!("{:.3}/{:.3}/{:.3}", s.q1, s.median, s.q3))
                .unwrap_or_else(|| "-".into())
        };
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let mut row = vec![
            r.name.clone(),
            format!("{} ms", r.link.forward_delay_ms),
            format!("{} ms", r.link.forward_jitter_ms),
            format!("{}", r.link.loss_prob),
            r.samples.len().to_string(),
        ];
        if r.no_samples() {
            row.extend([
                "NO SAMPLES".to_string(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
            ]);
        } else {
            row.extend([
                f(r.measured.map(|m| m.mean)),
                f(r.truth.map(|t| t.mean)),
                f(r.mean_delta_ms),
                f(r.delta_p95_ms),
                q(&r.measured),
                q(&r.truth),
            ]);
        }
        row.push(format!("{:.3}", r.final_jitter_ms));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}

fn boxplot(reports: &[ValidationReport]) -> String {
    let group_w = 150.0;
    let (left, top, bottom) = (70.0, 50.0, 70.0);
    let plot_h = 320.0;
    let width = left + group_w * reports.len().max(1) as f64 + 30.0;
    let height = top + plot_h + bottom;

    let hi = reports
        .iter()
        .flat_map(|r| [r.measured.map(|s| s.max), r.truth.map(|s| s.max)])
        .flatten()
        .fold(1.0f64, f64::max);
    let y_max = (hi * 1.1).ceil();
    let y = |v: f64| top + plot_h - v / y_max * plot_h;

    let mut doc = svg::Document::new(width, height);
    doc.text(
        left,
        24.0,
        "start",
        "font-size=\"15\" font-weight=\"bold\"",
        "Measured vs ground-truth RTT",
    );
    let _ = writeln!(
        doc.body,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"#333\"/>",
        top + plot_h
    );
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        doc.text(
            left - 6.0,
            y(v) + 4.0,
            "end",
            "font-size=\"11\"",
            &format!("{v:.0}"),
        );
        let _ = writeln!(
            doc.body,
            "<line x1=\"{left}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"#eeeeee\"/>",
            y(v),
            width - 30.0
        );
    }
    doc.text(16.0, top + plot_h / 2.0, "middle", "font-size=\"12\"", "ms");

    for (i, r) in reports.iter().enumerate() {
        let gx = left + group_w * i as f64;
        doc.text(
            gx + group_w / 2.0,
            top + plot_h + 20.0,
            "middle",
            "font-size=\"12\"",
            &r.name,
        );
        if r.no_samples() {
            doc.text(
                gx + group_w / 2.0,
                top + plot_h / 2.0,
                "middle",
                "font-size=\"12\" fill=\"#b00\"",
                "no samples",
            );
            continue;
        }
        for (k, (label, summary, color)) in [
            ("measured", r.measured, "#4c72b0"),
            ("truth", r.truth, "#dd8452"),
        ]
        .into_iter()
        .enumerate()
        {
            let Some(s) = summary else { continue };
            let x = gx + 25.0 + k as f64 * 55.0;
            let bw = 40.0;
            let cx = x + bw / 2.0;
            let _ = writeln!(
                doc.body,
                "<g class=\"box {label}\"><line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"#333\"/>\
<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.7\" stroke=\"#333\"/>\
<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#111\" stroke-width=\"2\"/></g>",
                y(s.max),
                y(s.min),
                y(s.q3),
                (y(s.q1) - y(s.q3)).max(1.0),
                y(s.median),
                x + bw,
                y(s.median),
            );
            doc.text(cx, top + plot_h + 38.0, "middle", "font-size=\"10\"", label);
        }
    }
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linklab::{run_validation, run_validation_with, LinkSpec};

    #[test]
    fn single_sample_report() {
        let r = run_validation(&LinkSpec::constant(3.0), 1, 1000.0).unwrap();
        let a = render_validation(std::slice::from_ref(&r));
        let row: Vec<&str> = a.csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[7], "1");
        // The measured five-number summary collapses to one value.
        assert!(row[13..18].iter().all(|v| *v == "3"));
        assert!(a.table.contains("3.000/3.000/3.000"));
    }

    #[test]
    fn rows_keep_scenario_order() {
        let reports: Vec<ValidationReport> = [0.0, 10.0, 100.0]
            .iter()
            .map(|&d| {
                run_validation_with(&LinkSpec::constant(d), 5, 1000.0, 100, format!("{d} ms"))
                    .unwrap()
            })
            .collect();
        let a = render_validation(&reports);
        let names: Vec<&str> = a
            .csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(names, vec!["0 ms", "10 ms", "100 ms"]);
        let table_rows: Vec<&str> = a.table.lines().skip(2).collect();
        assert_eq!(table_rows.len(), 3);
        assert!(table_rows[2].starts_with("100 ms"));
        assert_eq!(a.boxplot_svg.matches("class=\"box measured\"").count(), 3);
    }

    #[test]
    fn csv_parses_back_to_report_fields() {
        let r = run_validation_with(
            &LinkSpec::constant(30.0).with_jitter(30.0).with_seed(21),
            200,
            1000.0,
            100,
            "jitter".into(),
        )
        .unwrap();
        let a = render_validation(std::slice::from_ref(&r));
        let header: Vec<&str> = a.csv.lines().next().unwrap().split(',').collect();
        let row: Vec<&str> = a.csv.lines().nth(1).unwrap().split(',').collect();
        let get = |name: &str| -> f64 {
            row[header.iter().position(|h| *h == name).unwrap()]
                .parse()
                .unwrap()
        };
        let m = r.measured.unwrap();
        let t = r.truth.unwrap();
        assert_eq!(get("measured_mean_ms"), m.mean);
        assert_eq!(get("truth_mean_ms"), t.mean);
        assert_eq!(get("mean_delta_ms"), r.mean_delta_ms.unwrap());
        assert_eq!(get("delta_p95_ms"), r.delta_p95_ms.unwrap());
        assert_eq!(get("measured_q1_ms"), m.q1);
        assert_eq!(get("truth_q3_ms"), t.q3);
        assert_eq!(get("truth_max_ms"), t.max);
        assert_eq!(get("final_jitter_ms"), r.final_jitter_ms);
        assert_eq!(get("n_samples") as usize, r.samples.len());
        assert_eq!(get("forward_jitter_ms"), 30.0);
    }

    #[test]
    fn no_samples_notice() {
        let r = run_validation_with(&LinkSpec::blackhole(), 3, 1000.0, 100, "dead".into()).unwrap();
        let a = render_validation(&[r]);
        assert!(a.table.contains("NO SAMPLES"));
        assert!(a.csv.lines().nth(1).unwrap().contains(",no_samples,"));
        assert!(a.boxplot_svg.contains("no samples"));
    }
}
