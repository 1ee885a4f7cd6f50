//! Small-multiple line charts written as plain SVG 1.1.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::{MetricRow, StudyReport};

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;
const HEADER_H: f64 = 32.0;
const LEGEND_W: f64 = 170.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

struct Series {
    name: String,
    points: Vec<(f64, Option<f64>)>,
}

struct Panel {
    title: String,
    series: Vec<Series>,
}

/// Metric selector, y-axis label and fixed range for one chart.
struct Chart {
    file: &'static str,
    title: &'static str,
    y_label: &'static str,
    value: fn(&MetricRow) -> Option<f64>,
    fixed: Option<(f64, f64)>,
}

const CHARTS: [Chart; 3] = [
    Chart {
        file: "bias.svg",
        title: "Absolute bias scaled by sqrt(n)",
        y_label: "sqrt(n) |bias|",
        value: |r| r.scaled_abs_bias,
        fixed: None,
    },
    Chart {
        file: "sd.svg",
        title: "Empirical standard deviation scaled by sqrt(n)",
        y_label: "sqrt(n) sd",
        value: |r| r.scaled_sd,
        fixed: None,
    },
    Chart {
        file: "coverage.svg",
        title: "Coverage of Wald intervals",
        y_label: "coverage",
        value: |r| r.coverage,
        fixed: Some((0.0, 1.0)),
    },
];

/// `(file name, svg text)` for the bias, sd and coverage charts.
pub fn render_all(report: &StudyReport) -> Vec<(&'static str, String)> {
    CHARTS.iter().map(|c| (c.file, render(report, c))).collect()
}

fn ordered<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items.filter(|s| seen.insert(s.to_string())).map(str::to_string).collect()
}

fn panels(report: &StudyReport, chart: &Chart) -> Vec<Panel> {
    let rows = &report.rows;
    let scenarios = ordered(rows.iter().map(|r| r.scenario.as_str()));
    let regimes = ordered(rows.iter().map(|r| r.regime.as_str()));
    let by_regime = regimes.len() > 1;
    scenarios
        .into_iter()
        .map(|scenario| {
            let in_panel: Vec<&MetricRow> = rows.iter().filter(|r| r.scenario == scenario).collect();
            let keys = ordered(in_panel.iter().map(|r| r.estimator.as_str()));
            let mut series = Vec::new();
            for est in &keys {
                for regime in &regimes {
                    let mut points: Vec<(f64, Option<f64>)> = in_panel
                        .iter()
                        .filter(|r| &r.estimator == est && &r.regime == regime)
                        .map(|r| (r.n as f64, (chart.value)(r)))
                        .collect();
                    if points.iter().all(|p| p.1.is_none()) {
                        continue;
                    }
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let name = if by_regime { format!("{est} ({regime})") } else { est.clone() };
                    series.push(Series { name, points });
                }
            }
            Panel { title: format!("scenario {scenario}"), series }
        })
        .collect()
}

/// Round `x` up to 1, 2, 2.5 or 5 times a power of ten.
fn nice_ceiling(x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return 1.0;
    }
    let p = 10f64.powf(x.log10().floor());
    let m = x / p;
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].into_iter().find(|&s| m <= s + 1e-12).unwrap_or(10.0);
    step * p
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn render(report: &StudyReport, chart: &Chart) -> String {
    let panels = panels(report, chart);
    let names = ordered(panels.iter().flat_map(|p| p.series.iter().map(|s| s.name.as_str())));
    let n_panels = panels.len().max(1);
    let width = n_panels as f64 * PANEL_W + LEGEND_W;
    let height = PANEL_H + HEADER_H;

    let xs: Vec<f64> = panels.iter().flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0))).collect();
    let (x_min, x_max) = match (xs.iter().cloned().reduce(f64::min), xs.iter().cloned().reduce(f64::max)) {
        (Some(a), Some(b)) if b > a => (a, b),
        (Some(a), _) => (a - 1.0, a + 1.0),
        _ => (0.0, 1.0),
    };
    let x_ticks: Vec<f64> = {
        let mut t: Vec<f64> = xs.clone();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    };
    let (y_min, y_max) = chart.fixed.unwrap_or_else(|| {
        let top = panels
            .iter()
            .flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().filter_map(|q| q.1)))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        (0.0, nice_ceiling(top * 1.05))
    });

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        esc(chart.title)
    );

    for (k, panel) in panels.iter().enumerate() {
        let ox = k as f64 * PANEL_W;
        let oy = HEADER_H;
        let left = ox + MARGIN_L;
        let right = ox + PANEL_W - MARGIN_R;
        let top = oy + MARGIN_T;
        let bottom = oy + PANEL_H - MARGIN_B;
        let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * (right - left);
        let sy = |y: f64| bottom - (y.clamp(y_min, y_max) - y_min) / (y_max - y_min) * (bottom - top);

        let _ = writeln!(out, r#"<g class="panel">"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
            (left + right) / 2.0,
            top - 10.0,
            esc(&panel.title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444444"/>"##,
            right - left,
            bottom - top
        );
        for i in 0..=4 {
            let v = y_min + (y_max - y_min) * i as f64 / 4.0;
            let y = sy(v);
            let _ = writeln!(
                out,
                r##"<line x1="{left:.1}" y1="{y:.1}" x2="{right:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                left - 4.0,
                y + 4.0,
                tick_label(v)
            );
        }
        for &t in &x_ticks {
            let x = sx(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{bottom:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                bottom + 4.0,
                bottom + 16.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#,
            (left + right) / 2.0,
            bottom + 32.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            ox + 14.0,
            (top + bottom) / 2.0,
            ox + 14.0,
            (top + bottom) / 2.0,
            esc(chart.y_label)
        );
        for s in &panel.series {
            let color = PALETTE[names.iter().position(|n| n == &s.name).unwrap_or(0) % PALETTE.len()];
            let mut segment: Vec<String> = Vec::new();
            let flush = |segment: &mut Vec<String>, out: &mut String| {
                if segment.len() > 1 {
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        segment.join(" ")
                    );
                }
                segment.clear();
            };
            for &(x, y) in &s.points {
                match y.filter(|v| v.is_finite()) {
                    Some(y) => {
                        segment.push(format!("{:.1},{:.1}", sx(x), sy(y)));
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                    None => flush(&mut segment, &mut out),
                }
            }
            flush(&mut segment, &mut out);
        }
        let _ = writeln!(out, "</g>");
    }

    let lx = n_panels as f64 * PANEL_W + 8.0;
    for (i, name) in names.iter().enumerate() {
        let y = HEADER_H + MARGIN_T + 6.0 + i as f64 * 16.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            y + 4.0,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
