//! File-based run registry.
//!
//! ```text
//! <root>/runs/<experiment_id>/summary.json          experiment-level fits
//! <root>/runs/<experiment_id>/<run_id>/config.json  RunRecord
//!                                     /metrics.csv  step,train_loss,val_loss,train_acc,val_acc
//!                                     /llc.csv      step,lambda_hat,std_dev,anchor_loss,free_energy
//!                                     /loss_curve.csv  step,train_loss (every optimizer step)
//!                                     /events.json
//!                                     /checkpoints/ckpt_<step>.bin
//!                                     /summary.json
//! ```
//!
//! Every document carries a `format_version`. JSON documents and checkpoints are replaced
//! atomically (write to a temp file, then rename); CSV tables are append-only.

mod checkpoint;
mod csv;
mod ids;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::ExperimentId;
use crate::llc::SgldConfig;
use crate::models::{ModelSpec, ParamVector, TaskParams};
use crate::training::{Checkpoint, CheckpointSchedule, MetricRecord, OptimizerConfig, TrainingTrace};
use crate::transitions::{DetectorVariant, GrokEvent, LossTransitions, TransitionEvent};

pub use checkpoint::{
    checkpoint_file_name, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint,
    CHECKPOINT_FORMAT_VERSION,
};
pub(crate) use checkpoint::write_atomic;
pub use csv::{
    fmt_f64, parse_table, read_rows, render_table, CsvRow, LlcRow, LossPoint, LLC_HEADER,
    LOSS_CURVE_HEADER, METRICS_HEADER,
};
pub use ids::{is_run_id, new_run_id};

pub const FORMAT_VERSION: u32 = 1;
/// Environment variable that overrides the registry root.
pub const REGISTRY_ENV: &str = "SLT_LAB_REGISTRY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

/// Position of a run inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    /// Polynomial degree or rank.
    pub difficulty: Option<f64>,
    /// Half-width of the input interval.
    pub half_width: Option<f64>,
}

impl GridPoint {
    pub fn single() -> Self {
        Self {
            label: "run".into(),
            difficulty: None,
            half_width: None,
        }
    }
}

/// Everything needed to regenerate a run's data and repeat its training and measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub task: TaskParams,
    pub optimizer: OptimizerConfig,
    pub schedule: Option<CheckpointSchedule>,
    pub sgld: SgldConfig,
    pub seed: u64,
    pub point: GridPoint,
}

impl RunConfig {
    /// FNV-1a over the key-sorted JSON form.
    pub fn hash(&self) -> u64 {
        let value = serde_json::to_value(self).expect("config serializes");
        crate::fnv1a64(value.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub run_id: String,
    pub experiment_id: ExperimentId,
    /// 16 lowercase hex digits.
    pub config_hash: String,
    pub created_at: String,
    pub status: RunStatus,
    /// Training-set size `n` used by the LLC and free-energy rows.
    pub train_size: usize,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunEvent {
    Grok(GrokEvent),
    NoGrok,
    Transitions(LossTransitions),
    TransitionPairs {
        variant: DetectorVariant,
        events: Vec<TransitionEvent>,
    },
    Failure {
        stage: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventsDoc {
    format_version: u32,
    events: Vec<RunEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub status: RunStatus,
    pub point: GridPoint,
    pub seed: u64,
    pub final_train_loss: Option<f64>,
    pub converged: Option<bool>,
    pub lambda_hat: Option<f64>,
    pub lambda_std: Option<f64>,
    pub diverged_at: Option<usize>,
    /// Training loss of the closed-form least-squares fit, for the polynomial recipe.
    #[serde(default)]
    pub reference_loss: Option<f64>,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn new(status: RunStatus, point: GridPoint, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            status,
            point,
            seed,
            final_train_loss: None,
            converged: None,
            lambda_hat: None,
            lambda_std: None,
            diverged_at: None,
            reference_loss: None,
            error: None,
        }
    }
}

/// A run reconstructed from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub record: RunRecord,
    pub trace: TrainingTrace,
    pub llc: Vec<LlcRow>,
    pub events: Vec<RunEvent>,
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunRef {
    pub run_id: String,
    pub experiment_id: ExperimentId,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("document serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Missing(path.display().to_string()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| Error::ParseFailure {
        file: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$SLT_LAB_REGISTRY` when set, otherwise `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(REGISTRY_ENV) {
            Some(root) if !root.is_empty() => Self::new(root),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn experiment_dir(&self, id: ExperimentId) -> PathBuf {
        self.root.join("runs").join(id.as_str())
    }

    pub fn create_run(&self, experiment_id: ExperimentId, config: RunConfig, train_size: usize) -> Result<RunHandle> {
        let run_id = new_run_id();
        let dir = self.experiment_dir(experiment_id).join(&run_id);
        let ckpt = dir.join("checkpoints");
        fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let record = RunRecord {
            format_version: FORMAT_VERSION,
            run_id,
            experiment_id,
            config_hash: format!("{:016x}", config.hash()),
            created_at: ids::timestamp(),
            status: RunStatus::Running,
            train_size,
            config,
        };
        write_json(&dir.join("config.json"), &record)?;
        Ok(RunHandle { dir, record })
    }

    /// Every run, sorted by run id (creation order).
    pub fn list_runs(&self, experiment: Option<ExperimentId>) -> Result<Vec<RunRef>> {
        let ids: Vec<ExperimentId> = match experiment {
            Some(id) => vec![id],
            None => ExperimentId::ALL.to_vec(),
        };
        let mut out = Vec::new();
        for id in ids {
            let dir = self.experiment_dir(id);
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(Error::io(&dir, e)),
            };
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if is_run_id(&name) && entry.path().join("config.json").is_file() {
                    out.push(RunRef {
                        run_id: name,
                        experiment_id: id,
                    });
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf> {
        if is_run_id(run_id) {
            for id in ExperimentId::ALL {
                let dir = self.experiment_dir(id).join(run_id);
                if dir.join("config.json").is_file() {
                    return Ok(dir);
                }
            }
        }
        Err(Error::Missing(format!("run {run_id}")))
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord> {
        read_json(&self.run_dir(run_id)?.join("config.json"))
    }

    pub fn open_run(&self, run_id: &str) -> Result<RunHandle> {
        let dir = self.run_dir(run_id)?;
        let record = read_json(&dir.join("config.json"))?;
        Ok(RunHandle { dir, record })
    }

    pub fn load_summary(&self, run_id: &str) -> Result<Option<RunSummary>> {
        match read_json(&self.run_dir(run_id)?.join("summary.json")) {
            Ok(s) => Ok(Some(s)),
            Err(Error::Missing(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn load_checkpoint(&self, run_id: &str, step: usize) -> Result<ParamVector> {
        let dir = self.run_dir(run_id)?;
        let record: RunRecord = read_json(&dir.join("config.json"))?;
        let path = dir.join("checkpoints").join(checkpoint_file_name(step));
        if !path.is_file() {
            return Err(Error::MissingCheckpoint {
                run_id: run_id.to_string(),
                step,
            });
        }
        Ok(read_checkpoint(&path, &record.config.spec)?.1)
    }

    /// Steps of all checkpoints stored for a run, ascending.
    pub fn checkpoint_steps(&self, run_id: &str) -> Result<Vec<usize>> {
        let dir = self.run_dir(run_id)?.join("checkpoints");
        let mut steps = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(steps),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(step) = name
                .strip_prefix("ckpt_")
                .and_then(|s| s.strip_suffix(".bin"))
                .and_then(|s| s.parse().ok())
            {
                steps.push(step);
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    /// Full reconstruction: record, metrics, loss curve, checkpoints, LLC rows, events and
    /// summary. Missing tables load as empty.
    pub fn load_run(&self, run_id: &str) -> Result<LoadedRun> {
        let dir = self.run_dir(run_id)?;
        let record: RunRecord = read_json(&dir.join("config.json"))?;
        let records: Vec<MetricRecord> = read_rows(&dir.join("metrics.csv"))?;
        let curve: Vec<LossPoint> = read_rows(&dir.join("loss_curve.csv"))?;
        for (k, p) in curve.iter().enumerate() {
            if p.0 != k + 1 {
                return Err(Error::ParseFailure {
                    file: dir.join("loss_curve.csv"),
                    line: k + 3,
                    reason: format!("expected step {}, found {}", k + 1, p.0),
                });
            }
        }
        let mut checkpoints = Vec::new();
        for step in self.checkpoint_steps(run_id)? {
            let path = dir.join("checkpoints").join(checkpoint_file_name(step));
            let (stored, params) = read_checkpoint(&path, &record.config.spec)?;
            if stored != step {
                return Err(Error::LayoutMismatch {
                    path,
                    reason: format!("header step {stored} differs from file name"),
                });
            }
            checkpoints.push(Checkpoint { step, params });
        }
        let events = match read_json::<EventsDoc>(&dir.join("events.json")) {
            Ok(doc) => doc.events,
            Err(Error::Missing(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        let summary = self.load_summary(run_id)?;
        let trace = TrainingTrace {
            records,
            checkpoints,
            loss_curve: curve.into_iter().map(|p| p.1).collect(),
            diverged_at: summary.as_ref().and_then(|s| s.diverged_at),
        };
        Ok(LoadedRun {
            llc: read_rows(&dir.join("llc.csv"))?,
            record,
            trace,
            events,
            summary,
        })
    }

    /// The newest finished run of `experiment` whose config hashes to `config_hash`.
    pub fn find_completed(&self, experiment: ExperimentId, config_hash: &str) -> Result<Option<RunRecord>> {
        let mut found = None;
        for r in self.list_runs(Some(experiment))? {
            let record = self.load_record(&r.run_id)?;
            if record.config_hash == config_hash && record.status == RunStatus::Done {
                found = Some(record);
            }
        }
        Ok(found)
    }

    pub fn write_experiment_summary<T: Serialize>(&self, id: ExperimentId, summary: &T) -> Result<PathBuf> {
        let dir = self.experiment_dir(id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("summary.json");
        write_json(&path, summary)?;
        Ok(path)
    }

    pub fn read_experiment_summary<T: DeserializeOwned>(&self, id: ExperimentId) -> Result<T> {
        read_json(&self.experiment_dir(id).join("summary.json"))
    }
}

/// Writer for one run directory. One handle per run; distinct runs may be written
/// concurrently.
#[derive(Debug)]
pub struct RunHandle {
    dir: PathBuf,
    record: RunRecord,
}

impl RunHandle {
    pub fn run_id(&self) -> &str {
        &self.record.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn save_checkpoint(&self, step: usize, params: &ParamVector) -> Result<PathBuf> {
        if self.record.status != RunStatus::Running {
            return Err(Error::InvalidConfig(format!(
                "run {} is not running",
                self.record.run_id
            )));
        }
        write_checkpoint(&self.dir.join("checkpoints"), &self.record.config.spec, step, params)
    }

    pub fn append_metrics(&self, rows: &[MetricRecord]) -> Result<()> {
        csv::append_rows(&self.dir.join("metrics.csv"), rows)
    }

    pub fn append_llc(&self, rows: &[LlcRow]) -> Result<()> {
        csv::append_rows(&self.dir.join("llc.csv"), rows)
    }

    /// Entry `s - 1` of `curve` is stored as step `s`.
    pub fn write_loss_curve(&self, curve: &[f64]) -> Result<()> {
        let rows: Vec<LossPoint> = curve
            .iter()
            .enumerate()
            .map(|(k, &l)| LossPoint(k + 1, l))
            .collect();
        write_atomic(&self.dir.join("loss_curve.csv"), render_table(&rows).as_bytes())
    }

    pub fn append_events(&self, events: &[RunEvent]) -> Result<()> {
        let path = self.dir.join("events.json");
        let mut doc = match read_json::<EventsDoc>(&path) {
            Ok(doc) => doc,
            Err(Error::Missing(_)) => EventsDoc {
                format_version: FORMAT_VERSION,
                events: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        doc.events.extend_from_slice(events);
        write_json(&path, &doc)
    }

    pub fn write_summary(&self, summary: &RunSummary) -> Result<()> {
        write_json(&self.dir.join("summary.json"), summary)
    }

    pub fn set_status(&mut self, status: RunStatus) -> Result<()> {
        self.record.status = status;
        write_json(&self.dir.join("config.json"), &self.record)
    }

    /// Write the training trace: metrics rows, dense loss curve and every checkpoint.
    pub fn save_trace(&self, trace: &TrainingTrace) -> Result<()> {
        self.append_metrics(&trace.records)?;
        self.write_loss_curve(&trace.loss_curve)?;
        for c in &trace.checkpoints {
            self.save_checkpoint(c.step, &c.params)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
