//! Small hand-written SVG charts for the report.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Fixed x tick positions and labels; numeric ticks otherwise.
    pub x_ticks: Option<Vec<(f64, String)>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn frame(out: &mut String, f: &Frame, axes: &Axes) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=4 {
        let v = f.y.0 + (f.y.1 - f.y.0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            y + 4.0,
            tick(v)
        );
    }
    let ticks = axes.x_ticks.clone().unwrap_or_else(|| {
        (0..=4)
            .map(|i| {
                let v = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 4.0;
                (v, tick(v))
            })
            .collect()
    });
    for (v, label) in ticks {
        let x = f.px(v);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y1}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            y1 + 4.0,
            y1 + 18.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&axes.y_label)
    );
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 4.0,
            color(i),
            x + 18.0,
            y + 1.0,
            escape(l)
        );
    }
}

pub fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Polyline per series with a marker at every point.
pub fn line_chart(axes: &Axes, series: &[Series]) -> String {
    let f = Frame {
        x: range(
            series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0))
                .chain(axes.x_ticks.iter().flatten().map(|t| t.0)),
        ),
        y: range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut out = String::new();
    header(&mut out, &axes.title);
    frame(&mut out, &f, axes);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
        if s.points.len() <= 40 {
            for p in &pts {
                let (x, y) = p.split_once(',').expect("x,y");
                let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, color(i));
            }
        }
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One group of bars per category, one bar per series within each group.
pub fn bar_chart(axes: &Axes, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let n = categories.len().max(1) as f64;
    let ticks = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64 + 0.5, c.clone()))
        .collect();
    let axes = Axes {
        x_ticks: Some(ticks),
        ..axes.clone()
    };
    let hi = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let f = Frame {
        x: (0.0, n),
        y: (0.0, if hi > 0.0 { hi * 1.05 } else { 1.0 }),
    };
    let mut out = String::new();
    header(&mut out, &axes.title);
    frame(&mut out, &f, &axes);
    let slot = 0.8 / series.len().max(1) as f64;
    for (j, (_, values)) in series.iter().enumerate() {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let x = f.px(i as f64 + 0.1 + slot * j as f64);
            let w = f.px(slot) - f.px(0.0);
            let (top, base) = (f.py(*v), f.py(0.0));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{w:.1}" height="{:.1}" fill="{}"/>"#,
                base - top,
                color(j)
            );
        }
    }
    legend(&mut out, &series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Source points, adapted points and a faint segment joining each pair.
pub fn pair_scatter(title: &str, pairs: &[((f64, f64), (f64, f64))]) -> String {
    let all = || pairs.iter().flat_map(|(a, b)| [*a, *b]);
    let f = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| p.1)),
    };
    let axes = Axes {
        title: title.to_string(),
        x_label: "x".into(),
        y_label: "y".into(),
        x_ticks: None,
    };
    let mut out = String::new();
    header(&mut out, title);
    frame(&mut out, &f, &axes);
    for ((ax, ay), (bx, by)) in pairs {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-opacity="0.4"/>"##,
            f.px(*ax),
            f.py(*ay),
            f.px(*bx),
            f.py(*by)
        );
    }
    for (k, pick) in [0usize, 1].into_iter().enumerate() {
        for pair in pairs {
            let (x, y) = if pick == 0 { pair.0 } else { pair.1 };
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{}"/>"#,
                f.px(x),
                f.py(y),
                color(k)
            );
        }
    }
    legend(&mut out, &["source".into(), "adapted".into()]);
    out.push_str("</svg>\n");
    out
}
