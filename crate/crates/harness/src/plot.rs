//! Learning-dynamics figure: three stacked panels sharing the epoch axis.
//!
//! 1. utilization `u_A`, `u_B` and `delta` (scheduler rows);
//! 2. learning rates `alpha_A`, `alpha_B`, `alpha_AB`, drawn as steps;
//! 3. validation metric of the fused, A and B heads.
//!
//! Each series is one `<polyline>`; nothing else in the document is a
//! polyline, so the series count can be read back structurally.

use std::fmt::Write as _;
use std::path::Path;

use miles_core::Split;

use crate::error::HarnessError;
use crate::runlog::{LogRow, RowKind};

const WIDTH: f64 = 820.0;
const PANEL_HEIGHT: f64 = 220.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const TICKS: usize = 5;

struct Series {
    name: &'static str,
    color: &'static str,
    values: Vec<f64>,
}

struct Panel {
    title: &'static str,
    y_label: String,
    step: bool,
    series: Vec<Series>,
}

/// Pixel mapping for one panel; x is affine in the epoch number.
struct Frame {
    top: f64,
    epochs: usize,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn plot_width() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_height() -> f64 {
        PANEL_HEIGHT - TOP - BOTTOM
    }

    fn x(&self, epoch: f64) -> f64 {
        if self.epochs <= 1 {
            return LEFT + Self::plot_width() / 2.0;
        }
        LEFT + (epoch - 1.0) / (self.epochs - 1) as f64 * Self::plot_width()
    }

    fn y(&self, v: f64) -> f64 {
        let bottom = self.top + TOP + Self::plot_height();
        bottom - (v - self.y_min) / (self.y_max - self.y_min) * Self::plot_height()
    }
}

fn y_range(series: &[Series]) -> (f64, f64) {
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64, span: f64) -> String {
    if span < 1e-2 || v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_panel(svg: &mut String, panel: &Panel, index: usize, epochs: usize) {
    let (y_min, y_max) = y_range(&panel.series);
    let frame = Frame {
        top: index as f64 * PANEL_HEIGHT,
        epochs,
        y_min,
        y_max,
    };
    let x0 = LEFT;
    let x1 = LEFT + Frame::plot_width();
    let y_top = frame.top + TOP;
    let y_bottom = y_top + Frame::plot_height();

    let _ = writeln!(svg, r#"<g class="panel" id="panel-{}">"#, index + 1);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        frame.top + 18.0,
        escape(panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
        Frame::plot_width(),
        Frame::plot_height()
    );

    for t in 0..TICKS {
        let v = y_min + (y_max - y_min) * t as f64 / (TICKS - 1) as f64;
        let y = frame.y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#333"/>"##,
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 3.0,
            tick_label(v, y_max - y_min)
        );
    }
    let x_ticks: Vec<usize> = if epochs <= 10 {
        (1..=epochs).collect()
    } else {
        let stride = epochs.div_ceil(10);
        (1..=epochs).filter(|k| (k - 1) % stride == 0).collect()
    };
    for k in x_ticks {
        let x = frame.x(k as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{y_bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            y_bottom + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{k}</text>"#,
            y_bottom + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">epoch</text>"#,
        (x0 + x1) / 2.0,
        y_bottom + 30.0
    );
    let yc = (y_top + y_bottom) / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{yc:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 16 {yc:.2})">{}</text>"#,
        escape(&panel.y_label)
    );

    for (si, s) in panel.series.iter().enumerate() {
        let mut pts = Vec::with_capacity(2 * s.values.len());
        for (i, &v) in s.values.iter().enumerate() {
            let k = (i + 1) as f64;
            let y = frame.y(v);
            pts.push(format!("{:.3},{:.3}", frame.x(k), y));
            if panel.step && i + 1 < s.values.len() {
                pts.push(format!("{:.3},{:.3}", frame.x(k + 1.0), y));
            }
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(s.name),
            s.color,
            pts.join(" ")
        );

        let ly = y_top + 12.0 + 18.0 * si as f64;
        let lx = x1 + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Renders the figure. `metric_name` labels the third panel's y axis.
pub fn render(rows: &[LogRow], metric_name: &str) -> Result<String, HarnessError> {
    let sched: Vec<&LogRow> = rows.iter().filter(|r| r.kind == RowKind::Scheduler).collect();
    let val: Vec<&LogRow> = rows
        .iter()
        .filter(|r| r.kind == RowKind::Split(Split::Validation))
        .collect();
    if sched.is_empty() || sched.len() != val.len() {
        return Err(HarnessError::RunLog(
            "plot needs a nonempty log with one scheduler and one validation row per epoch".into(),
        ));
    }
    let col = |rows: &[&LogRow], f: fn(&LogRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let panels = [
        Panel {
            title: "Conditional utilization",
            y_label: "utilization".into(),
            step: false,
            series: vec![
                Series {
                    name: "u_A",
                    color: "#1f77b4",
                    values: col(&sched, |r| r.u_a),
                },
                Series {
                    name: "u_B",
                    color: "#ff7f0e",
                    values: col(&sched, |r| r.u_b),
                },
                Series {
                    name: "delta",
                    color: "#7f7f7f",
                    values: col(&sched, |r| r.delta),
                },
            ],
        },
        Panel {
            title: "Learning rates",
            y_label: "learning rate".into(),
            step: true,
            series: vec![
                Series {
                    name: "alpha_A",
                    color: "#1f77b4",
                    values: col(&sched, |r| r.alpha_a),
                },
                Series {
                    name: "alpha_B",
                    color: "#ff7f0e",
                    values: col(&sched, |r| r.alpha_b),
                },
                Series {
                    name: "alpha_AB",
                    color: "#2ca02c",
                    values: col(&sched, |r| r.alpha_ab),
                },
            ],
        },
        Panel {
            title: "Validation performance",
            y_label: format!("validation {metric_name}"),
            step: false,
            series: vec![
                Series {
                    name: "AB",
                    color: "#2ca02c",
                    values: col(&val, |r| r.metric.ab),
                },
                Series {
                    name: "A",
                    color: "#1f77b4",
                    values: col(&val, |r| r.metric.a),
                },
                Series {
                    name: "B",
                    color: "#ff7f0e",
                    values: col(&val, |r| r.metric.b),
                },
            ],
        },
    ];

    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, i, sched.len());
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

pub fn save(rows: &[LogRow], metric_name: &str, path: &Path) -> Result<(), HarnessError> {
    let svg = render(rows, metric_name)?;
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}
