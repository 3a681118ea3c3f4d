//! Minimal SVG emission: axes, scatter points with error bars, polylines, bars and text.

use std::fmt::Write as _;

use super::{fmt_num, Figure, SeriesKind};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    x_log: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi, v) = if self.x_log {
            (self.x.0.log10(), self.x.1.log10(), x.log10())
        } else {
            (self.x.0, self.x.1, x)
        };
        LEFT + (v - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

pub(super) fn render(fig: &Figure) -> String {
    let frame = Frame {
        x: (fig.x_ticks[0], *fig.x_ticks.last().expect("ticks")),
        y: (fig.y_ticks[0], *fig.y_ticks.last().expect("ticks")),
        x_log: fig.x_log,
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&fig.title)
    );

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for &t in &fig.x_ticks {
        let x = frame.px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 20.0,
            fmt_num(t)
        );
    }
    for &t in &fig.y_ticks {
        let y = frame.py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&fig.y_label)
    );

    for (k, series) in fig.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        match series.kind {
            SeriesKind::Points => {
                for d in &series.data {
                    let (cx, cy) = (frame.px(d.x), frame.py(d.y));
                    if let Some(e) = d.y_err {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                            frame.py(d.y - e),
                            frame.py(d.y + e)
                        );
                    }
                    let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#);
                }
            }
            SeriesKind::Line => {
                let pts: Vec<String> = series
                    .data
                    .iter()
                    .map(|d| format!("{:.2},{:.2}", frame.px(d.x), frame.py(d.y)))
                    .collect();
                let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                    pts.join(" ")
                );
            }
            SeriesKind::Bars => {
                for d in &series.data {
                    let xl = frame.px(d.x);
                    let xr = frame.px(d.x2.unwrap_or(d.x));
                    let top = frame.py(d.y);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{xl:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="{color}"/>"#,
                        (xr - xl).max(0.0),
                        (frame.py(0.0_f64.max(frame.y.0)) - top).max(0.0)
                    );
                }
            }
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x1 + 15.0,
            ly - 10.0,
            x1 + 32.0,
            ly,
            escape(&series.name)
        );
    }
    let base = TOP + 10.0 + 18.0 * fig.series.len() as f64 + 10.0;
    for (k, (label, value)) in fig.annotations.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{} = {}</text>"#,
            x1 + 15.0,
            base + 18.0 * k as f64,
            escape(label),
            fmt_num(*value)
        );
    }
    s.push_str("</svg>\n");
    s
}
