//! CSV and SVG reports built from stored runs.
//!
//! Each figure is written twice: `<name>.csv` with every plotted value (data points, fitted
//! and reference curves, axis ticks, annotations) and `<name>.svg` rendered from exactly
//! those values. Output is a pure function of the registry contents.

mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::analysis::{analyze, ExperimentSummary, ScalingFit};
use crate::experiments::ExperimentId;
use crate::registry::{write_atomic, LoadedRun, Registry};
use crate::transitions::{ArrheniusFit, DetectorConfig, HistogramBin};

/// Samples per fitted or reference curve.
const CURVE_SAMPLES: usize = 64;
pub const FIGURE_HEADER: &str = "kind,series,x,x2,y,y_err";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Points,
    Line,
    Bars,
}

impl SeriesKind {
    fn as_str(self) -> &'static str {
        match self {
            SeriesKind::Points => "point",
            SeriesKind::Line => "line",
            SeriesKind::Bars => "bar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datum {
    pub x: f64,
    /// Right edge, for bars.
    pub x2: Option<f64>,
    pub y: f64,
    pub y_err: Option<f64>,
}

impl Datum {
    fn xy(x: f64, y: f64) -> Self {
        Self {
            x,
            x2: None,
            y,
            y_err: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub kind: SeriesKind,
    pub dashed: bool,
    pub data: Vec<Datum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub series: Vec<Series>,
    /// Shown as `label = value`.
    pub annotations: Vec<(String, f64)>,
    pub x_ticks: Vec<f64>,
    pub y_ticks: Vec<f64>,
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// `v` rounded to four significant digits.
fn sig4(v: f64) -> f64 {
    format!("{v:.3e}").parse().expect("formatted float parses")
}

/// Round-number ticks (steps of 1, 2 or 5 times a power of ten) covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .expect("10·mag ≥ raw");
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).floor() as i64;
    let last = (hi / step).ceil() as i64;
    (first..=last)
        .map(|k| {
            let t = k as f64 * step;
            format!("{t:.decimals$}").parse::<f64>().expect("tick parses") + 0.0
        })
        .collect()
}

/// Powers of ten covering `[lo, hi]` (both positive).
pub fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let a = lo.log10().floor() as i32;
    let b = (hi.log10().ceil() as i32).max(a + 1);
    (a..=b)
        .map(|e| format!("1e{e}").parse().expect("power of ten parses"))
        .collect()
}

impl Figure {
    fn new(name: String, title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            name,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_log: false,
            series: Vec::new(),
            annotations: Vec::new(),
            x_ticks: Vec::new(),
            y_ticks: Vec::new(),
        }
    }

    /// Fix the axis ticks from the data extent.
    fn finish(mut self) -> Self {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for d in self.series.iter().flat_map(|s| &s.data) {
            xs.push(d.x);
            xs.extend(d.x2);
            ys.push(d.y);
            if let Some(e) = d.y_err {
                ys.push(d.y - e);
                ys.push(d.y + e);
            }
        }
        if self.series.iter().any(|s| s.kind == SeriesKind::Bars) {
            ys.push(0.0);
        }
        let range = |v: &[f64]| {
            if v.is_empty() {
                (0.0, 1.0)
            } else {
                (
                    v.iter().copied().fold(f64::INFINITY, f64::min),
                    v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        };
        let (xl, xh) = range(&xs);
        let (yl, yh) = range(&ys);
        self.x_ticks = if self.x_log && xl > 0.0 {
            log_ticks(xl, xh)
        } else {
            self.x_log = false;
            nice_ticks(xl, xh)
        };
        self.y_ticks = nice_ticks(yl, yh);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(FIGURE_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        for series in &self.series {
            for d in &series.data {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    series.kind.as_str(),
                    series.name,
                    fmt_num(d.x),
                    opt(d.x2),
                    fmt_num(d.y),
                    opt(d.y_err)
                );
            }
        }
        for &t in &self.x_ticks {
            let _ = writeln!(s, "tick_x,,{},,,", fmt_num(t));
        }
        for &t in &self.y_ticks {
            let _ = writeln!(s, "tick_y,,,,{},", fmt_num(t));
        }
        for (label, v) in &self.annotations {
            let _ = writeln!(s, "annotation,{label},,,{},", fmt_num(*v));
        }
        s
    }

    pub fn to_svg(&self) -> String {
        svg::render(self)
    }
}

fn curve(xs_lo: f64, xs_hi: f64, log: bool, f: impl Fn(f64) -> f64) -> Vec<Datum> {
    (0..CURVE_SAMPLES)
        .map(|k| {
            let t = k as f64 / (CURVE_SAMPLES - 1) as f64;
            let x = if log {
                (xs_lo.ln() + t * (xs_hi.ln() - xs_lo.ln())).exp()
            } else {
                xs_lo + t * (xs_hi - xs_lo)
            };
            Datum::xy(x, f(x))
        })
        .collect()
}

fn arrhenius_figure(name: String, title: &str, points: &[(f64, f64)], fit: Option<&ArrheniusFit>) -> Figure {
    let mut fig = Figure::new(name, title, "ΔF (nats)", "ln r");
    fig.series.push(Series {
        name: "events".into(),
        kind: SeriesKind::Points,
        dashed: false,
        data: points.iter().map(|&(df, r)| Datum::xy(df, r.ln())).collect(),
    });
    if let Some(fit) = fit {
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        fig.series.push(Series {
            name: "linear fit".into(),
            kind: SeriesKind::Line,
            dashed: false,
            data: curve(lo, hi, false, |x| fit.intercept + fit.slope * x),
        });
        fig.annotations.push(("slope".into(), sig4(fit.slope)));
        if let Some(r2) = fit.r_squared {
            fig.annotations.push(("R^2".into(), sig4(r2)));
        }
    }
    fig.finish()
}

fn histogram_figure(name: String, title: &str, x_label: &str, bins: &[HistogramBin]) -> Figure {
    let mut fig = Figure::new(name, title, x_label, "runs");
    fig.series.push(Series {
        name: "count".into(),
        kind: SeriesKind::Bars,
        dashed: false,
        data: bins
            .iter()
            .map(|b| Datum {
                x: b.lo,
                x2: Some(b.hi),
                y: b.count as f64,
                y_err: None,
            })
            .collect(),
    });
    fig.finish()
}

fn interval_name(interval: Option<f64>) -> String {
    match interval {
        Some(h) => format!("X=[-{h};{h}]"),
        None => "estimate".into(),
    }
}

fn scaling_figure(exp: ExperimentId, summary: &ExperimentSummary) -> Option<Figure> {
    let scaling = summary.scaling.as_ref()?;
    let (title, x_label) = match exp {
        ExperimentId::Q2E1 => ("LLC versus polynomial degree", "degree d"),
        ExperimentId::Q2E2 => ("LLC versus rank of a factored linear map", "rank r"),
        _ => ("LLC versus data rank of a ReLU autoencoder", "rank r"),
    };
    let mut fig = Figure::new(format!("{exp}_scaling"), title, x_label, "estimated LLC");
    fig.x_log = exp == ExperimentId::Q2E1;
    let mut intervals: Vec<Option<f64>> = scaling.points.iter().map(|p| p.interval).collect();
    intervals.dedup();
    let lo = scaling.points.iter().map(|p| p.difficulty).fold(f64::INFINITY, f64::min);
    let hi = scaling.points.iter().map(|p| p.difficulty).fold(f64::NEG_INFINITY, f64::max);
    for interval in &intervals {
        fig.series.push(Series {
            name: interval_name(*interval),
            kind: SeriesKind::Points,
            dashed: false,
            data: scaling
                .points
                .iter()
                .filter(|p| p.interval == *interval)
                .map(|p| Datum {
                    x: p.difficulty,
                    x2: None,
                    y: p.lambda_mean,
                    y_err: Some(p.lambda_std),
                })
                .collect(),
        });
    }
    let fits: Vec<&ScalingFit> = scaling.fits.iter().collect();
    for fit in &fits {
        let c = fit.fit.coefficients.clone();
        fig.series.push(Series {
            name: format!("fit {}", interval_name(fit.interval)),
            kind: SeriesKind::Line,
            dashed: false,
            data: curve(lo, hi, fig.x_log, |x| {
                c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
            }),
        });
    }
    if let Some(fit) = fits.iter().find(|f| !f.theory.is_empty()) {
        let t = fit.theory.clone();
        fig.series.push(Series {
            name: "theory".into(),
            kind: SeriesKind::Line,
            dashed: true,
            data: curve(lo, hi, fig.x_log, |x| t.iter().rev().fold(0.0, |acc, &k| acc * x + k)),
        });
    }
    if let [fit] = fits.as_slice() {
        let names = ["intercept", "slope", "quadratic"];
        for (k, c) in fit.fit.coefficients.iter().enumerate() {
            fig.annotations.push((names[k.min(2)].into(), sig4(*c)));
        }
        if let Some(r2) = fit.fit.r_squared {
            fig.annotations.push(("R^2".into(), sig4(r2)));
        }
    }
    Some(fig.finish())
}

/// Every figure of an experiment summary.
pub fn figures(summary: &ExperimentSummary) -> Vec<Figure> {
    let exp = summary.experiment_id;
    let mut out = Vec::new();
    if let Some(g) = &summary.grokking {
        let points: Vec<(f64, f64)> = g.events.iter().map(|e| (e.delta_f, e.r as f64)).collect();
        out.push(arrhenius_figure(
            format!("{exp}_arrhenius"),
            "Free-energy change versus grokking time",
            &points,
            g.arrhenius.as_ref(),
        ));
        out.push(histogram_figure(
            format!("{exp}_delta_lambda"),
            "Distribution of the LLC change across grokking",
            "Δλ",
            &g.delta_lambda_histogram,
        ));
        out.push(histogram_figure(
            format!("{exp}_log_r"),
            "Distribution of grokking time",
            "ln r",
            &g.log_r_histogram,
        ));
    }
    for v in &summary.transitions {
        let points: Vec<(f64, f64)> = v.events.iter().map(|e| (e.delta_f, e.r as f64)).collect();
        out.push(arrhenius_figure(
            format!("{exp}_arrhenius_{}", v.variant),
            &format!("Free-energy change versus transition spacing ({} detector)", v.variant),
            &points,
            v.arrhenius.as_ref(),
        ));
    }
    out.extend(scaling_figure(exp, summary));
    out
}

/// Table of the per-run rows behind the figures, at full precision.
pub fn events_table(summary: &ExperimentSummary) -> String {
    let mut s = String::new();
    if let Some(g) = &summary.grokking {
        s.push_str("run_id,i,j,r,delta_lambda,delta_F\n");
        for e in &g.events {
            let _ = writeln!(s, "{},{},{},{},{},{}", e.run_id, e.i, e.j, e.r, fmt_num(e.delta_lambda), fmt_num(e.delta_f));
        }
    } else if !summary.transitions.is_empty() {
        s.push_str("variant,run_id,i,j,r,delta_F\n");
        for v in &summary.transitions {
            for e in &v.events {
                let _ = writeln!(s, "{},{},{},{},{},{}", v.variant, e.run_id, e.i, e.j, e.r, fmt_num(e.delta_f));
            }
        }
    } else if let Some(sc) = &summary.scaling {
        s.push_str("difficulty,interval,lambda_mean,lambda_std,repeats,flagged\n");
        for p in &sc.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_num(p.difficulty),
                p.interval.map(fmt_num).unwrap_or_default(),
                fmt_num(p.lambda_mean),
                fmt_num(p.lambda_std),
                p.repeats,
                p.flagged
            );
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub summary: ExperimentSummary,
    pub files: Vec<PathBuf>,
}

/// Write the report for an explicit set of runs of one experiment.
pub fn report_runs(
    exp: ExperimentId,
    runs: &[LoadedRun],
    detector: &DetectorConfig,
    out_dir: &Path,
) -> Result<ReportOutput> {
    if runs.is_empty() {
        return Err(Error::NoData(format!("no runs of {exp}")));
    }
    let summary = analyze(exp, runs, detector)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: String, body: &str| -> Result<()> {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        files.push(path);
        Ok(())
    };
    let table_name = if summary.scaling.is_some() { "points" } else { "events" };
    write(format!("{exp}_{table_name}.csv"), &events_table(&summary))?;
    for fig in figures(&summary) {
        write(format!("{}.csv", fig.name), &fig.to_csv())?;
        write(format!("{}.svg", fig.name), &fig.to_svg())?;
    }
    Ok(ReportOutput { summary, files })
}

/// Write the report for every stored run of `exp`.
pub fn report_experiment(
    registry: &Registry,
    exp: ExperimentId,
    detector: &DetectorConfig,
    out_dir: &Path,
) -> Result<ReportOutput> {
    let runs = registry
        .list_runs(Some(exp))?
        .iter()
        .map(|r| registry.load_run(&r.run_id))
        .collect::<Result<Vec<_>>>()?;
    report_runs(exp, &runs, detector, out_dir)
}
