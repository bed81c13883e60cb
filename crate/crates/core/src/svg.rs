//! Minimal SVG string building shared by the report renderers.

use std::fmt::Write as _;

/// Fill for values above the threshold.
pub const RED: &str = "#d62728";

pub struct Document {
    width: f64,
    height: f64,
    defs: String,
    pub body: String,
}

impl Document {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            defs: String::new(),
            body: String::new(),
        }
    }

    pub fn def(&mut self, def: &str) {
        self.defs.push_str(def);
        self.defs.push('\n');
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, attrs: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" {attrs}>{}</text>",
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            w = self.width,
            h = self.height
        );
        if !self.defs.is_empty() {
            out.push_str("<defs>\n");
            out.push_str(&self.defs);
            out.push_str("</defs>\n");
        }
        let _ = writeln!(
            out,
            "<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>",
            self.width, self.height
        );
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Sequential light-to-dark blue ramp for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    const LO: (f64, f64, f64) = (247.0, 251.0, 255.0);
    const HI: (f64, f64, f64) = (8.0, 81.0, 156.0);
    let t = t.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(LO.0, HI.0),
        mix(LO.1, HI.1),
        mix(LO.2, HI.2)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#f7fbff");
        assert_eq!(ramp(1.0), "#08519c");
        assert_eq!(ramp(7.0), "#08519c");
    }
}
