//! Experiment-level analysis over stored runs. Everything here works from [`LoadedRun`]s, so a
//! summary computed right after a sweep and one recomputed from a reloaded registry agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentId;
use crate::error::{Error, Result};
use crate::llc::{free_energy, FreeEnergy};
use crate::math::{poly_fit, FitResult};
use crate::models::ModelSpec;
use crate::registry::{LlcRow, LoadedRun, RunEvent, RunRecord, RunStatus, FORMAT_VERSION};
use crate::transitions::{
    arrhenius_fit, detect_loss_transitions, histogram, pair_consecutive, ArrheniusFit,
    DetectorConfig, DetectorVariant, HistogramBin,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Degree or rank.
    pub difficulty: f64,
    /// Input half-width, for the polynomial recipe.
    pub interval: Option<f64>,
    pub lambda_mean: f64,
    /// Sample standard deviation over repeats; 0 for a single repeat.
    pub lambda_std: f64,
    pub repeats: usize,
    /// Repeats left out because training did not converge or the run failed.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub interval: Option<f64>,
    /// Polynomial degree of the fitted curve in the difficulty.
    pub degree: usize,
    pub fit: FitResult,
    /// Coefficients of the theoretical curve, constant first; empty when there is none.
    pub theory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub points: Vec<ScalingPoint>,
    /// Runs left out of every point (non-converged, failed or without an LLC row).
    pub excluded_runs: usize,
    pub fits: Vec<ScalingFit>,
    pub fit_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrokRow {
    pub run_id: String,
    pub i: usize,
    pub j: usize,
    pub r: usize,
    pub delta_lambda: f64,
    #[serde(rename = "delta_F")]
    pub delta_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrokkingSummary {
    /// Runs that trained to the end.
    pub runs: usize,
    pub grokked: usize,
    pub grokked_fraction: f64,
    pub events: Vec<GrokRow>,
    pub arrhenius: Option<ArrheniusFit>,
    pub fit_error: Option<String>,
    pub delta_lambda_histogram: Vec<HistogramBin>,
    pub log_r_histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub run_id: String,
    pub i: usize,
    pub j: usize,
    pub r: usize,
    #[serde(rename = "delta_F")]
    pub delta_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: DetectorVariant,
    pub runs_used: usize,
    /// Runs with fewer than two detected transitions.
    pub runs_excluded: usize,
    pub events: Vec<TransitionRow>,
    pub arrhenius: Option<ArrheniusFit>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub format_version: u32,
    pub experiment_id: ExperimentId,
    pub total_runs: usize,
    pub done_runs: usize,
    pub failed_runs: usize,
    pub scaling: Option<ScalingSummary>,
    pub grokking: Option<GrokkingSummary>,
    pub transitions: Vec<VariantSummary>,
}

/// `(step, F)` for every LLC row of a run.
pub fn free_energies(record: &RunRecord, rows: &[LlcRow]) -> Vec<(usize, FreeEnergy)> {
    rows.iter()
        .map(|r| (r.step, free_energy(record.train_size, r.anchor_loss, r.lambda_hat)))
        .collect()
}

fn usable_for_scaling(run: &LoadedRun) -> bool {
    run.record.status == RunStatus::Done
        && !run.llc.is_empty()
        && run.summary.as_ref().and_then(|s| s.converged) != Some(false)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Interval, difficulty, usable λ̂ values and the count of unusable repeats of one grid point.
type PointGroup = (Option<f64>, f64, Vec<f64>, usize);

/// Mean and spread of the final LLC row per grid point, ordered by interval (widest first)
/// and then difficulty. Points without a single usable repeat are dropped.
pub fn scaling_points(runs: &[LoadedRun]) -> Vec<ScalingPoint> {
    // keyed by (−half_width, difficulty) bit patterns so the order is total
    let mut groups: BTreeMap<(i64, u64), PointGroup> = BTreeMap::new();
    for run in runs {
        let point = &run.record.config.point;
        let Some(difficulty) = point.difficulty else {
            continue;
        };
        let key = (
            point.half_width.map_or(i64::MIN, |h| -(h * 1e9).round() as i64),
            difficulty.to_bits(),
        );
        let entry = groups
            .entry(key)
            .or_insert_with(|| (point.half_width, difficulty, Vec::new(), 0));
        if usable_for_scaling(run) {
            entry.2.push(run.llc.last().expect("non-empty").lambda_hat);
        } else {
            entry.3 += 1;
        }
    }
    let mut points: Vec<ScalingPoint> = groups
        .into_values()
        .filter(|(_, _, values, _)| !values.is_empty())
        .map(|(interval, difficulty, values, flagged)| {
            let (lambda_mean, lambda_std) = mean_std(&values);
            ScalingPoint {
                difficulty,
                interval,
                lambda_mean,
                lambda_std,
                repeats: values.len(),
                flagged,
            }
        })
        .collect();
    points.sort_by(|a, b| {
        b.interval
            .partial_cmp(&a.interval)
            .expect("finite")
            .then(a.difficulty.total_cmp(&b.difficulty))
    });
    points
}

fn scaling_summary(exp: ExperimentId, runs: &[LoadedRun]) -> ScalingSummary {
    let points = scaling_points(runs);
    let d = runs.iter().find_map(|r| match r.record.config.spec {
        ModelSpec::LowRank { d, .. } => Some(d as f64),
        _ => None,
    });
    let (degree, theory) = match exp {
        ExperimentId::Q2E1 => (1, vec![0.0, 0.5]),
        ExperimentId::Q2E2 => (2, vec![0.0, d.unwrap_or(0.0), -0.5]),
        _ => (1, Vec::new()),
    };
    let mut intervals: Vec<Option<f64>> = points.iter().map(|p| p.interval).collect();
    intervals.dedup();
    let mut fits = Vec::new();
    let mut fit_errors = Vec::new();
    for interval in intervals {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.interval == interval)
            .map(|p| (p.difficulty, p.lambda_mean))
            .unzip();
        let fit = if xs.len() <= degree {
            Err(Error::TooFewEvents {
                needed: degree + 1,
                found: xs.len(),
            })
        } else {
            poly_fit(&xs, &ys, degree)
        };
        match fit {
            Ok(fit) => fits.push(ScalingFit {
                interval,
                degree,
                fit,
                theory: theory.clone(),
            }),
            Err(e) => fit_errors.push(match interval {
                Some(h) => format!("half_width {h}: {e}"),
                None => e.to_string(),
            }),
        }
    }
    ScalingSummary {
        points,
        excluded_runs: runs.iter().filter(|r| !usable_for_scaling(r)).count(),
        fits,
        fit_errors,
    }
}

fn auto_bins(count: usize) -> usize {
    ((count as f64).sqrt().ceil() as usize).clamp(1, 20)
}

fn grokking_summary(runs: &[LoadedRun]) -> GrokkingSummary {
    let finished: Vec<&LoadedRun> = runs
        .iter()
        .filter(|r| r.record.status == RunStatus::Done)
        .collect();
    let mut events = Vec::new();
    for run in &finished {
        let free: BTreeMap<usize, f64> = run.llc.iter().map(|r| (r.step, r.free_energy)).collect();
        for ev in &run.events {
            let RunEvent::Grok(g) = ev else { continue };
            let (Some(fi), Some(fj)) = (free.get(&g.i), free.get(&g.j)) else {
                continue;
            };
            events.push(GrokRow {
                run_id: run.record.run_id.clone(),
                i: g.i,
                j: g.j,
                r: g.r,
                delta_lambda: g.delta_lambda,
                delta_f: fi - fj,
            });
        }
    }
    let pairs: Vec<(f64, f64)> = events.iter().map(|e| (e.delta_f, e.r as f64)).collect();
    let (arrhenius, fit_error) = match arrhenius_fit(&pairs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let dl: Vec<f64> = events.iter().map(|e| e.delta_lambda).collect();
    let lr: Vec<f64> = events.iter().map(|e| (e.r as f64).ln()).collect();
    let bins = auto_bins(events.len());
    GrokkingSummary {
        runs: finished.len(),
        grokked: events.len(),
        grokked_fraction: if finished.is_empty() {
            0.0
        } else {
            events.len() as f64 / finished.len() as f64
        },
        events,
        arrhenius,
        fit_error,
        delta_lambda_histogram: histogram(&dl, bins).unwrap_or_default(),
        log_r_histogram: histogram(&lr, bins).unwrap_or_default(),
    }
}

/// Transition pairs of one run under `cfg`, recomputed from its dense loss curve and LLC rows.
pub fn run_transition_pairs(run: &LoadedRun, cfg: &DetectorConfig) -> Result<Vec<TransitionRow>> {
    let found = detect_loss_transitions(&run.trace, cfg)?;
    let free = free_energies(&run.record, &run.llc);
    Ok(pair_consecutive(&found.segments, &free)?
        .into_iter()
        .map(|e| TransitionRow {
            run_id: run.record.run_id.clone(),
            i: e.i,
            j: e.j,
            r: e.r,
            delta_f: e.delta_f,
        })
        .collect())
}

fn variant_summary(runs: &[LoadedRun], detector: &DetectorConfig, variant: DetectorVariant) -> Result<VariantSummary> {
    let cfg = DetectorConfig {
        variant,
        ..detector.clone()
    };
    let mut events = Vec::new();
    let (mut used, mut excluded) = (0, 0);
    for run in runs.iter().filter(|r| r.record.status == RunStatus::Done) {
        match run_transition_pairs(run, &cfg) {
            Ok(rows) => {
                used += 1;
                events.extend(rows);
            }
            Err(Error::FewerThanTwoTransitions { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let pairs: Vec<(f64, f64)> = events.iter().map(|e| (e.delta_f, e.r as f64)).collect();
    let (arrhenius, fit_error) = match arrhenius_fit(&pairs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(VariantSummary {
        variant,
        runs_used: used,
        runs_excluded: excluded,
        events,
        arrhenius,
        fit_error,
    })
}

/// Experiment summary from stored runs of one experiment.
pub fn analyze(exp: ExperimentId, runs: &[LoadedRun], detector: &DetectorConfig) -> Result<ExperimentSummary> {
    if let Some(other) = runs.iter().find(|r| r.record.experiment_id != exp) {
        return Err(Error::InvalidConfig(format!(
            "run {} belongs to {}, not {exp}",
            other.record.run_id, other.record.experiment_id
        )));
    }
    let count = |s: RunStatus| runs.iter().filter(|r| r.record.status == s).count();
    let mut summary = ExperimentSummary {
        format_version: FORMAT_VERSION,
        experiment_id: exp,
        total_runs: runs.len(),
        done_runs: count(RunStatus::Done),
        failed_runs: count(RunStatus::Failed),
        scaling: None,
        grokking: None,
        transitions: Vec::new(),
    };
    match exp {
        ExperimentId::Q1E1 => summary.grokking = Some(grokking_summary(runs)),
        ExperimentId::Q1E2 => {
            for variant in DetectorVariant::BOTH {
                summary.transitions.push(variant_summary(runs, detector, variant)?);
            }
        }
        _ => summary.scaling = Some(scaling_summary(exp, runs)),
    }
    Ok(summary)
}
