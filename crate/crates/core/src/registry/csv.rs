//! Plain CSV tables with a leading `# format_version=N` line. Floats are written with 17
//! significant digits so every value reads back bit-exact; missing values are empty cells.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llc::{free_energy, LlcEstimate};
use crate::training::MetricRecord;

pub const CSV_FORMAT_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "step,train_loss,val_loss,train_acc,val_acc";
pub const LLC_HEADER: &str = "step,lambda_hat,std_dev,anchor_loss,free_energy";
pub const LOSS_CURVE_HEADER: &str = "step,train_loss";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// One LLC measurement at a checkpoint. `free_energy` is `n·anchor_loss + lambda_hat·ln n`
/// with `n` the run's training-set size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlcRow {
    pub step: usize,
    pub lambda_hat: f64,
    pub std_dev: f64,
    pub anchor_loss: f64,
    pub free_energy: f64,
}

impl LlcRow {
    pub fn from_estimate(step: usize, est: &LlcEstimate) -> Self {
        Self {
            step,
            lambda_hat: est.lambda_hat,
            std_dev: est.std_dev,
            anchor_loss: est.anchor_loss,
            free_energy: free_energy(est.n, est.anchor_loss, est.lambda_hat).value,
        }
    }
}

pub trait CsvRow: Sized {
    const HEADER: &'static str;
    fn to_line(&self) -> String;
    fn parse(cells: &[&str]) -> std::result::Result<Self, String>;
}

fn cell_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn cell_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        cell_f64(s).map(Some)
    }
}

fn cell_step(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("bad step `{s}`"))
}

impl CsvRow for MetricRecord {
    const HEADER: &'static str = METRICS_HEADER;

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}\n",
            self.step,
            fmt_f64(self.train_loss),
            fmt_opt(self.val_loss),
            fmt_opt(self.train_acc),
            fmt_opt(self.val_acc)
        )
    }

    fn parse(c: &[&str]) -> std::result::Result<Self, String> {
        Ok(MetricRecord {
            step: cell_step(c[0])?,
            train_loss: cell_f64(c[1])?,
            val_loss: cell_opt(c[2])?,
            train_acc: cell_opt(c[3])?,
            val_acc: cell_opt(c[4])?,
        })
    }
}

impl CsvRow for LlcRow {
    const HEADER: &'static str = LLC_HEADER;

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}\n",
            self.step,
            fmt_f64(self.lambda_hat),
            fmt_f64(self.std_dev),
            fmt_f64(self.anchor_loss),
            fmt_f64(self.free_energy)
        )
    }

    fn parse(c: &[&str]) -> std::result::Result<Self, String> {
        Ok(LlcRow {
            step: cell_step(c[0])?,
            lambda_hat: cell_f64(c[1])?,
            std_dev: cell_f64(c[2])?,
            anchor_loss: cell_f64(c[3])?,
            free_energy: cell_f64(c[4])?,
        })
    }
}

/// `(step, loss)` of the dense training-loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint(pub usize, pub f64);

impl CsvRow for LossPoint {
    const HEADER: &'static str = LOSS_CURVE_HEADER;

    fn to_line(&self) -> String {
        format!("{},{}\n", self.0, fmt_f64(self.1))
    }

    fn parse(c: &[&str]) -> std::result::Result<Self, String> {
        Ok(LossPoint(cell_step(c[0])?, cell_f64(c[1])?))
    }
}

fn preamble(header: &str) -> String {
    format!("# format_version={CSV_FORMAT_VERSION}\n{header}\n")
}

/// Append rows, creating the file with its preamble if needed. Each row goes out in a single
/// `write` on an append-mode handle, so concurrent readers never see half a row.
pub fn append_rows<R: CsvRow>(path: &Path, rows: &[R]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let fresh = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    if fresh {
        file.write_all(preamble(R::HEADER).as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    for row in rows {
        file.write_all(row.to_line().as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn render_table<R: CsvRow>(rows: &[R]) -> String {
    let mut out = preamble(R::HEADER);
    for row in rows {
        out.push_str(&row.to_line());
    }
    out
}

/// Read a table; a missing file is an empty table.
pub fn read_rows<R: CsvRow>(path: &Path) -> Result<Vec<R>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    parse_table(path, &text)
}

pub fn parse_table<R: CsvRow>(path: &Path, text: &str) -> Result<Vec<R>> {
    let fail = |line: usize, reason: String| Error::ParseFailure {
        file: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == format!("# format_version={CSV_FORMAT_VERSION}") => {}
        Some((_, l)) => return Err(fail(1, format!("unsupported preamble `{l}`"))),
        None => return Ok(Vec::new()),
    }
    match lines.next() {
        Some((_, h)) if h == R::HEADER => {}
        Some((_, h)) => return Err(fail(2, format!("header `{h}`, expected `{}`", R::HEADER))),
        None => return Ok(Vec::new()),
    }
    let width = R::HEADER.split(',').count();
    lines
        .map(|(k, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(fail(k + 1, format!("{} cells, expected {width}", cells.len())));
            }
            R::parse(&cells).map_err(|reason| fail(k + 1, reason))
        })
        .collect()
}
