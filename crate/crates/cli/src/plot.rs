//! Static SVG line charts. Output depends only on the data passed in, so
//! the same logs always give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 280.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 50.0;
const GAP: f64 = 60.0;
const MAX_POINTS: usize = 2000;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub color: &'static str,
    pub dashed: bool,
}

/// Shaded region between `lo` and `hi`.
pub struct Band<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
}

#[derive(Default)]
pub struct Panel<'a> {
    pub y_label: String,
    pub series: Vec<Series<'a>>,
    pub bands: Vec<Band<'a>>,
    /// Draw the legend; off for plots with many anonymous lines.
    pub legend: bool,
}

fn stride(n: usize) -> usize {
    n.div_ceil(MAX_POINTS).max(1)
}

/// Indices kept after decimation, always including the last point.
fn kept(n: usize) -> impl Iterator<Item = usize> {
    let s = stride(n);
    (0..n).step_by(s).chain((n > 0 && (n - 1) % s != 0).then_some(n - 1))
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-3 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * lo.abs().max(1e-12) {
        (lo - 0.5 * lo.abs().max(1e-3), hi + 0.5 * hi.abs().max(1e-3))
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders stacked panels sharing the x axis.
pub fn render(title: &str, x_label: &str, panels: &[Panel<'_>]) -> String {
    let height = TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP);
    let plot_w = WIDTH - LEFT - RIGHT;
    let (x0, x1) = {
        let xs = panels
            .iter()
            .flat_map(|p| p.series.iter().flat_map(|s| s.x.iter()).chain(p.bands.iter().flat_map(|b| b.x.iter())));
        let (lo, hi) = range(xs);
        let pad = 0.05 / 1.1 * (hi - lo);
        (lo + pad, hi - pad)
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" font-size="16" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    for (pi, panel) in panels.iter().enumerate() {
        let top = TOP + pi as f64 * (PANEL_HEIGHT + GAP);
        let ys = panel
            .series
            .iter()
            .flat_map(|s| s.y.iter())
            .chain(panel.bands.iter().flat_map(|b| b.lo.iter().chain(&b.hi)));
        let (y0, y1) = range(ys);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#333"/>"##
        );
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                y + 4.0,
                label(t)
            );
        }
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                top + PANEL_HEIGHT,
                top + PANEL_HEIGHT + 16.0,
                label(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            LEFT - 55.0,
            top + PANEL_HEIGHT / 2.0,
            escape(&panel.y_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            top + PANEL_HEIGHT + 34.0,
            escape(x_label)
        );
        for b in &panel.bands {
            let idx: Vec<usize> = kept(b.x.len()).collect();
            let mut d = String::new();
            for (k, &i) in idx.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(b.x[i]), sy(b.hi[i]));
            }
            for &i in idx.iter().rev() {
                let _ = write!(d, " L{:.2},{:.2}", sx(b.x[i]), sy(b.lo[i]));
            }
            let _ = writeln!(svg, r#"<path d="{d} Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#, b.color);
        }
        for s in &panel.series {
            let mut d = String::new();
            for (k, i) in kept(s.x.len().min(s.y.len())).enumerate() {
                if s.y[i].is_finite() {
                    let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(s.x[i]), sy(s.y[i]));
                }
            }
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.3"{dash}/>"#,
                s.color
            );
        }
        if panel.legend {
            let entries = panel
                .bands
                .iter()
                .map(|b| (&b.label, b.color, false, true))
                .chain(panel.series.iter().map(|s| (&s.label, s.color, s.dashed, false)));
            for (k, (name, color, dashed, band)) in entries.enumerate() {
                let y = top + 14.0 + k as f64 * 18.0;
                let x = LEFT + plot_w + 12.0;
                if band {
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{x}" y="{:.2}" width="24" height="10" fill="{color}" fill-opacity="0.25"/>"#,
                        y - 5.0
                    );
                } else {
                    let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
                    let _ = writeln!(
                        svg,
                        r#"<line x1="{x}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                        x + 24.0
                    );
                }
                let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 30.0, y + 4.0, escape(name));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
