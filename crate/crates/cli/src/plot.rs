//! Small static SVG charts for reports.

use std::fmt::Write;

const W: f64 = 900.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, mut y0: f64, mut y1: f64) -> Self {
        if y1 - y0 < 1e-9 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        Self { x0, x1: if x1 > x0 { x1 } else { x0 + 1.0 }, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, title: &str, y_label: &str, f: &Frame) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>
<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>
"#,
        W / 2.0,
        escape(title),
        H / 2.0,
        H / 2.0,
        escape(y_label),
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        H - BOTTOM,
    );
    for k in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
}

fn legend(svg: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let x = LEFT + 10.0 + 150.0 * i as f64;
        let y = H - 15.0;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{c}"/><text x="{}" y="{y}">{}</text>"#,
            y - 6.0,
            x + 18.0,
            escape(name)
        );
    }
}

/// One polyline per named series over a shared x axis.
pub fn line_chart(title: &str, y_label: &str, series: &[(&str, &[f64])]) -> String {
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let f = if lo.is_finite() { Frame::new(0.0, n.saturating_sub(1) as f64, lo, hi) } else { Frame::new(0.0, 1.0, 0.0, 1.0) };
    let mut svg = String::new();
    open(&mut svg, title, y_label, &f);
    for (i, (_, values)) in series.iter().enumerate() {
        let pts: Vec<String> =
            values.iter().enumerate().map(|(x, y)| format!("{:.1},{:.1}", f.px(x as f64), f.py(*y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut svg, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// Mean with ± one standard deviation whiskers per label.
pub fn error_bars(title: &str, y_label: &str, bars: &[(&str, f64, f64)]) -> String {
    let hi = bars.iter().map(|(_, m, s)| m + s).fold(0.0, f64::max);
    let f = Frame::new(0.0, bars.len().max(1) as f64, 0.0, hi);
    let mut svg = String::new();
    open(&mut svg, title, y_label, &f);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let c = COLORS[i % COLORS.len()];
        let (top, base) = (f.py(*mean), f.py(0.0));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{c}" opacity="0.7"/>
<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>
<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{mean:.2}</text>"#,
            cx - slot * 0.3,
            slot * 0.6,
            base - top,
            f.py(mean + std),
            f.py((mean - std).max(f.y0)),
            H - BOTTOM + 16.0,
            escape(label),
            top - 6.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
