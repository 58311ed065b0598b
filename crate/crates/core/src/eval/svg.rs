//! Minimal static SVG charts: line plots and box plots.

use std::fmt::Write;

use crate::stats::Summary;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.xmax - self.xmin).max(f64::MIN_POSITIVE);
        self.x0 + (x - self.xmin) / span * self.w
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.ymax - self.ymin).max(f64::MIN_POSITIVE);
        self.y0 + self.h - (y - self.ymin) / span * self.h
    }

    fn axes(&self, out: &mut String, title: &str, y_label: &str) {
        let _ = write!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 10.0,
            escape(title)
        );
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 - 45.0,
            self.y0 + self.h / 2.0,
            self.x0 - 45.0,
            self.y0 + self.h / 2.0,
            escape(y_label)
        );
        for k in 0..=4 {
            let v = self.ymin + (self.ymax - self.ymin) * k as f64 / 4.0;
            let y = self.py(v);
            let _ = write!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
                self.x0,
                self.x0 + self.w,
                self.x0 - 4.0,
                y + 3.0,
                tick(v)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    pub color: &'a str,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

/// Stacked line-chart panels sharing an x axis.
pub fn line_panels(panels: &[Panel<'_>], x_label: &str) -> String {
    let height = panels.len() as f64 * (PANEL_HEIGHT + MARGIN_TOP + MARGIN_BOTTOM);
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    out.push('\n');
    for (i, panel) in panels.iter().enumerate() {
        let all = || panel.series.iter().flat_map(|s| s.points.iter());
        let (xmin, xmax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
        let (xmin, xmax) = if xmin.is_finite() { (xmin, xmax) } else { (0.0, 1.0) };
        let (ymin, ymax) = bounds(all().map(|p| p.1));
        let frame = Frame {
            x0: MARGIN_LEFT,
            y0: i as f64 * (PANEL_HEIGHT + MARGIN_TOP + MARGIN_BOTTOM) + MARGIN_TOP,
            w: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
            h: PANEL_HEIGHT,
            xmin,
            xmax,
            ymin,
            ymax,
        };
        frame.axes(&mut out, panel.title, panel.y_label);
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            frame.x0 + frame.w / 2.0,
            frame.y0 + frame.h + 28.0,
            escape(x_label)
        );
        for (k, s) in panel.series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                .collect();
            let _ = write!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                s.color,
                path.join(" ")
            );
            let ly = frame.y0 + 15.0 + 16.0 * k as f64;
            let lx = frame.x0 + frame.w + 10.0;
            let _ = write!(
                out,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                lx + 18.0,
                s.color,
                lx + 22.0,
                ly + 4.0,
                escape(s.name)
            );
        }
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}

pub struct BoxCategory<'a> {
    pub name: String,
    /// One box per series; `None` leaves a gap.
    pub boxes: Vec<Option<&'a Summary>>,
}

/// Grouped box plot: whiskers at min/max, box from Q1 to Q3, median line.
pub fn box_plot(
    title: &str,
    y_label: &str,
    series_names: &[&str],
    categories: &[BoxCategory<'_>],
) -> String {
    let height = PANEL_HEIGHT + MARGIN_TOP + MARGIN_BOTTOM + 20.0;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    out.push('\n');
    let (ymin, ymax) = bounds(
        categories
            .iter()
            .flat_map(|c| c.boxes.iter().flatten())
            .flat_map(|s| [s.min, s.max]),
    );
    let frame = Frame {
        x0: MARGIN_LEFT,
        y0: MARGIN_TOP,
        w: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        h: PANEL_HEIGHT,
        xmin: 0.0,
        xmax: categories.len().max(1) as f64,
        ymin,
        ymax,
    };
    frame.axes(&mut out, title, y_label);
    let n_series = series_names.len().max(1) as f64;
    let slot = 0.8 / n_series;
    for (c, cat) in categories.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            frame.px(c as f64 + 0.5),
            frame.y0 + frame.h + 16.0,
            escape(&cat.name)
        );
        for (k, b) in cat.boxes.iter().enumerate() {
            let Some(s) = b else { continue };
            let color = PALETTE[k % PALETTE.len()];
            let left = frame.px(c as f64 + 0.1 + slot * k as f64 + 0.1 * slot);
            let right = frame.px(c as f64 + 0.1 + slot * (k + 1) as f64 - 0.1 * slot);
            let mid = 0.5 * (left + right);
            let _ = write!(
                out,
                r#"<line x1="{mid:.2}" y1="{:.2}" x2="{mid:.2}" y2="{:.2}" stroke="{color}"/>"#,
                frame.py(s.min),
                frame.py(s.max)
            );
            let _ = write!(
                out,
                r#"<rect x="{left:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{color}"/>"#,
                frame.py(s.q3),
                right - left,
                (frame.py(s.q1) - frame.py(s.q3)).max(0.5)
            );
            let _ = write!(
                out,
                r#"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
                y = frame.py(s.median)
            );
        }
    }
    for (k, name) in series_names.iter().enumerate() {
        let ly = frame.y0 + 15.0 + 16.0 * k as f64;
        let lx = frame.x0 + frame.w + 10.0;
        let _ = write!(
            out,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="10" fill="white" stroke="{}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            ly - 5.0,
            PALETTE[k % PALETTE.len()],
            lx + 18.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("\n</svg>\n");
    out
}
