use std::fmt::Write as _;

use crate::record::MeasurementRecord;
use crate::svg;

/// Lower edges of the coarse bins, ms. Bins are half-open `[lo, next_lo)`,
/// the last one unbounded.
pub const COARSE_EDGES_MS: [f64; 3] = [0.0, 60.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub total: u64,
    /// Counts for `[0,60)`, `[60,100)`, `[100,inf)`.
    pub coarse: [u64; 3],
    /// 1 ms bins: `fine[k]` counts RTTs in `[k, k+1)`.
    pub fine: Vec<u64>,
}

impl Histogram {
    pub fn from_rtts(rtts: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Histogram {
            total: 0,
            coarse: [0; 3],
            fine: Vec::new(),
        };
        for rtt in rtts {
            h.add(rtt);
        }
        h
    }

    fn add(&mut self, rtt_ms: f64) {
        let rtt = rtt_ms.max(0.0);
        let bin = COARSE_EDGES_MS
            .iter()
            .rposition(|&lo| rtt >= lo)
            .unwrap_or(0);
        self.coarse[bin] += 1;
        let k = rtt.floor() as usize;
        if self.fine.len() <= k {
            self.fine.resize(k + 1, 0);
        }
        self.fine[k] += 1;
        self.total += 1;
    }

    /// Coarse-bin fractions; all zero for an empty histogram.
    pub fn fractions(&self) -> [f64; 3] {
        if self.total == 0 {
            return [0.0; 3];
        }
        let t = self.total as f64;
        self.coarse.map(|c| c as f64 / t)
    }

    /// CSV with a `kind` column: three `coarse` rows followed by one `fine`
    /// row per 1 ms bin. The upper edge of the last coarse bin is empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,lo_ms,hi_ms,count,fraction\n");
        let fr = self.fractions();
        for i in 0..3 {
            let hi = COARSE_EDGES_MS
                .get(i + 1)
                .map(|h| h.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "coarse,{},{},{},{}",
                COARSE_EDGES_MS[i], hi, self.coarse[i], fr[i]
            );
        }
        let t = self.total.max(1) as f64;
        for (k, &c) in self.fine.iter().enumerate() {
            let _ = writeln!(out, "fine,{},{},{},{}", k, k + 1, c, c as f64 / t);
        }
        out
    }

    /// Bar chart of the 1 ms bins with the threshold marked and the coarse
    /// fractions in the legend.
    pub fn to_svg(&self, threshold_ms: f64) -> String {
        let width = 760.0;
        let height = 360.0;
        let (left, right, top, bottom) = (60.0, 20.0, 50.0, 50.0);
        let plot_w = width - left - right;
        let plot_h = height - top - bottom;
        // Show at least up to 120 ms so the threshold region is always visible.
        let span = self.fine.len().max(120) as f64;
        let max_count = self.fine.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar_w = plot_w / span;

        let mut doc = svg::Document::new(width, height);
        doc.text(
            left,
            24.0,
            "start",
            "font-size=\"15\" font-weight=\"bold\"",
            &format!("RTT distribution (n = {})", self.total),
        );
        for (k, &c) in self.fine.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let h = c as f64 / max_count * plot_h;
            let x = left + k as f64 * bar_w;
            let fill = if (k as f64) >= threshold_ms {
                svg::RED
            } else {
                "#4c72b0"
            };
            let _ = writeln!(
                doc.body,
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{fill}\"><title>{k}-{} ms: {c}</title></rect>",
                top + plot_h - h,
                bar_w.max(0.5),
                k + 1
            );
        }
        // Axes.
        let _ = writeln!(
            doc.body,
            "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#333\"/>",
            top + plot_h,
            left + plot_w
        );
        let _ = writeln!(
            doc.body,
            "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"#333\"/>",
            top + plot_h
        );
        let tick_step = if span > 400.0 { 100 } else { 20 };
        for t in (0..=span as usize).step_by(tick_step) {
            let x = left + t as f64 * bar_w;
            doc.text(
                x,
                top + plot_h + 16.0,
                "middle",
                "font-size=\"11\"",
                &t.to_string(),
            );
        }
        doc.text(
            left + plot_w / 2.0,
            height - 10.0,
            "middle",
            "font-size=\"12\"",
            "RTT [ms]",
        );
        doc.text(
            14.0,
            top + plot_h / 2.0,
            "middle",
            "font-size=\"12\"",
            "count",
        );
        let tx = left + threshold_ms * bar_w;
        let _ = writeln!(
            doc.body,
            "<line class=\"threshold\" x1=\"{tx:.2}\" y1=\"{top}\" x2=\"{tx:.2}\" y2=\"{}\" stroke=\"{}\" stroke-dasharray=\"4 3\"/>",
            top + plot_h,
            svg::RED
        );
        let fr = self.fractions();
        let legend = format!(
            "0-60 ms: {:.1}%   60-100 ms: {:.1}%   100+ ms: {:.2}%",
            fr[0] * 100.0,
            fr[1] * 100.0,
            fr[2] * 100.0
        );
        doc.text(width - right, 24.0, "end", "font-size=\"12\"", &legend);
        doc.finish()
    }
}

pub fn histogram(records: &[MeasurementRecord]) -> Histogram {
    Histogram::from_rtts(records.iter().map(|r| r.candidate_pair_rtt))
}
