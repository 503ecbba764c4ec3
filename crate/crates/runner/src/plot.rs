//! Deterministic SVG line plots.
//!
//! Every series is a `<polyline class="series">` and every min/max band a
//! `<polygon class="band">`, so the files can be inspected with any XML
//! reader.

use std::fmt::Write as _;
use std::path::Path;

use crate::run::Table;
use crate::scenario::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Estimate,
    Error,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Estimate => "estimate.svg",
            PlotKind::Error => "error.svg",
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

struct Series {
    label: String,
    color: &'static str,
    y: Vec<f64>,
    dashed: bool,
}

struct Band {
    color: &'static str,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if y.is_finite() { y.clamp(self.y0, self.y1) } else { self.y1 };
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn tick_label(v: f64, span: f64) -> String {
    if span < 0.05 && v != 0.0 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn points(frame: &Frame, t: &[f64], y: &[f64]) -> String {
    t.iter()
        .zip(y)
        .map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn col(table: &Table, name: &str) -> Vec<f64> {
    table.column(name).unwrap_or_default()
}

/// SVG document for one plot of `table`.
pub fn render(table: &Table, model: ModelKind, kind: PlotKind, title: &str) -> String {
    let t = col(table, "t");
    let mut series = Vec::new();
    let mut bands = Vec::new();
    let (y_label, fixed_range) = match kind {
        PlotKind::Estimate => ("inhibition", Some((0.0, 1.0))),
        PlotKind::Error => ("relative error", None),
    };
    match (model, kind) {
        (ModelKind::Ode, PlotKind::Estimate) => {
            series.push(Series { label: "theta".into(), color: COLORS[0], y: col(table, "theta"), dashed: false });
            series.push(Series { label: "theta_hat".into(), color: COLORS[1], y: col(table, "theta_hat"), dashed: true });
        }
        (ModelKind::Ode, PlotKind::Error) => {
            series.push(Series { label: "rel_err".into(), color: COLORS[0], y: col(table, "rel_err"), dashed: false });
        }
        (ModelKind::Pde, PlotKind::Estimate) => {
            for (i, q) in ["theta", "theta_hat"].into_iter().enumerate() {
                bands.push(Band { color: COLORS[i], lower: col(table, &format!("{q}_min")), upper: col(table, &format!("{q}_max")) });
                series.push(Series {
                    label: format!("{q} (mean)"),
                    color: COLORS[i],
                    y: col(table, &format!("{q}_mean")),
                    dashed: i == 1,
                });
            }
        }
        (ModelKind::Pde, PlotKind::Error) => {
            for (i, stat) in ["min", "mean", "max"].into_iter().enumerate() {
                series.push(Series {
                    label: format!("rel_err {stat}"),
                    color: COLORS[i],
                    y: col(table, &format!("rel_err_{stat}")),
                    dashed: i != 1,
                });
            }
        }
    }

    let x0 = t.first().copied().unwrap_or(0.0);
    let mut x1 = t.last().copied().unwrap_or(1.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = fixed_range.unwrap_or_else(|| {
        let top = series.iter().flat_map(|s| s.y.iter().copied()).filter(|y| y.is_finite()).fold(0.0, f64::max);
        (0.0, if top > 0.0 { top * 1.05 } else { 1.0 })
    });
    let frame = Frame { x0, x1, y0, y1 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(title));

    let (bl, br, bt, bb) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{bl}" y1="{bb}" x2="{br}" y2="{bb}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{bl}" y1="{bb}" x2="{bl}" y2="{bt}"/>"#);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="ticks">"#);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{bb}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, bb + 4.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, bb + 18.0, tick_label(xv, x1 - x0));
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{py:.2}" x2="{bl}" y2="{py:.2}" stroke="black"/>"#, bl - 4.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, bl - 6.0, py + 4.0, tick_label(yv, y1 - y0));
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#, (bl + br) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{y_label}</text>"#,
        (bt + bb) / 2.0,
        (bt + bb) / 2.0
    );

    for band in &bands {
        let mut pts = points(&frame, &t, &band.upper);
        let rt: Vec<f64> = t.iter().rev().copied().collect();
        let rl: Vec<f64> = band.lower.iter().rev().copied().collect();
        if !rt.is_empty() {
            pts.push(' ');
            pts.push_str(&points(&frame, &rt, &rl));
        }
        let _ = writeln!(svg, r#"<polygon class="band" points="{pts}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, band.color);
    }
    for s in &series {
        let dash = if s.dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            escape(&s.label),
            points(&frame, &t, &s.y),
            s.color
        );
    }
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/>"#, x + 20.0, s.color);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(&s.label));
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_plot(table: &Table, model: ModelKind, kind: PlotKind, title: &str, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, render(table, model, kind, title))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::columns;

    fn table(model: ModelKind, rows: usize) -> Table {
        let header = columns(model);
        let rows = (0..rows).map(|i| header.iter().enumerate().map(|(j, _)| (i + j) as f64 * 0.01).collect()).collect();
        Table { header, rows }
    }

    #[test]
    fn series_counts() {
        let count = |svg: &str, class: &str| svg.matches(&format!(r#"class="{class}""#)).count();
        let ode = table(ModelKind::Ode, 5);
        assert_eq!(count(&render(&ode, ModelKind::Ode, PlotKind::Estimate, "x"), "series"), 2);
        assert_eq!(count(&render(&ode, ModelKind::Ode, PlotKind::Error, "x"), "series"), 1);
        let pde = table(ModelKind::Pde, 5);
        let est = render(&pde, ModelKind::Pde, PlotKind::Estimate, "x");
        assert_eq!((count(&est, "series"), count(&est, "band")), (2, 2));
        assert_eq!(count(&render(&pde, ModelKind::Pde, PlotKind::Error, "x"), "series"), 3);
    }

    #[test]
    fn single_row_and_escaping() {
        let svg = render(&table(ModelKind::Ode, 1), ModelKind::Ode, PlotKind::Error, "a<b");
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn deterministic() {
        let t = table(ModelKind::Pde, 20);
        assert_eq!(render(&t, ModelKind::Pde, PlotKind::Estimate, "p"), render(&t, ModelKind::Pde, PlotKind::Estimate, "p"));
    }
}
