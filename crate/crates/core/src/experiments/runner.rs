use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::analysis::{analyze, ExperimentSummary};
use super::config::ExperimentConfig;
use super::ExperimentId;
use crate::error::{Error, Result};
use crate::llc::estimate_at;
use crate::math::{poly_fit, RngStream};
use crate::models::{GeneratedData, ModelSpec};
use crate::par::{self, Parallelism};
use crate::registry::{
    GridPoint, LlcRow, Registry, RunConfig, RunEvent, RunHandle, RunStatus, RunSummary,
};
use crate::training::{converge_from, train, TrainingTrace};
use crate::transitions::{detect_grokking, detect_loss_transitions, DetectorConfig, DetectorVariant, GrokEvent};

/// Stream ids under a run's seed.
pub const DATA_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const SGLD_STREAM: u64 = 3;

/// The dataset a run trained on, rebuilt from its stored config.
pub fn regenerate_data(rc: &RunConfig) -> Result<GeneratedData> {
    rc.spec
        .generate_dataset(&rc.task, &mut RngStream::new(rc.seed, DATA_STREAM))
}

/// One task of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub point: GridPoint,
    pub seed: u64,
    pub status: RunStatus,
    /// Taken from an earlier identical run instead of being executed again.
    pub reused: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub experiment_id: ExperimentId,
    pub outcomes: Vec<RunOutcome>,
    pub summary: ExperimentSummary,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.status == RunStatus::Failed)
            .count()
    }
}

/// Execute every run of the sweep (skipping finished identical runs when `cfg.resume`),
/// then analyze the experiment's stored runs and write its summary document.
///
/// Individual run failures are recorded in the run directory and in the returned outcomes;
/// only configuration and registry errors abort the sweep.
pub fn run_experiment(registry: &Registry, cfg: &ExperimentConfig) -> Result<SweepReport> {
    let plan = cfg.plan()?;
    let exp = cfg.experiment_id;
    let mut done: HashSet<String> = HashSet::new();
    if cfg.resume {
        for r in registry.list_runs(Some(exp))? {
            let record = registry.load_record(&r.run_id)?;
            if record.status == RunStatus::Done {
                done.insert(record.config_hash);
            }
        }
    }
    let detector = cfg.detector.clone();
    let outcomes = par::with_workers(cfg.workers, || {
        par::map_slice(Parallelism::Parallel, &plan, |rc| {
            let hash = format!("{:016x}", rc.hash());
            if done.contains(&hash) {
                if let Some(prev) = registry.find_completed(exp, &hash)? {
                    return Ok(RunOutcome {
                        run_id: prev.run_id,
                        point: rc.point.clone(),
                        seed: rc.seed,
                        status: RunStatus::Done,
                        reused: true,
                        error: None,
                    });
                }
            }
            execute_run(registry, exp, rc.clone(), &detector)
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let ids: Vec<&str> = outcomes.iter().map(|o| o.run_id.as_str()).collect();
    let runs = ids
        .iter()
        .map(|id| registry.load_run(id))
        .collect::<Result<Vec<_>>>()?;
    let summary = analyze(exp, &runs, &cfg.detector)?;
    registry.write_experiment_summary(exp, &summary)?;
    Ok(SweepReport {
        experiment_id: exp,
        outcomes,
        summary,
    })
}

/// Train and measure one run, persisting everything under a fresh run id. Errors inside
/// the run mark it failed; only registry errors are returned as `Err`.
pub fn execute_run(
    registry: &Registry,
    experiment: ExperimentId,
    rc: RunConfig,
    detector: &DetectorConfig,
) -> Result<RunOutcome> {
    let data = regenerate_data(&rc);
    let (point, seed) = (rc.point.clone(), rc.seed);
    let train_size = data.as_ref().map(|d| d.train.len()).unwrap_or(0);
    let mut handle = registry.create_run(experiment, rc, train_size)?;
    let result = data.and_then(|data| match experiment {
        ExperimentId::Q1E1 => grokking_run(&handle, &data, detector),
        ExperimentId::Q1E2 => transition_run(&handle, &data, detector),
        _ => scaling_run(&handle, &data),
    });
    let (status, error) = match result {
        Ok(mut summary) => {
            summary.status = RunStatus::Done;
            handle.write_summary(&summary)?;
            (RunStatus::Done, None)
        }
        Err(e @ (Error::Io { .. } | Error::LayoutMismatch { .. })) => return Err(e),
        Err(e) => {
            let message = e.to_string();
            log::warn!("run {} failed: {message}", handle.run_id());
            handle.append_events(&[RunEvent::Failure {
                stage: "run".into(),
                message: message.clone(),
            }])?;
            let mut summary = RunSummary::new(RunStatus::Failed, point.clone(), seed);
            summary.error = Some(message.clone());
            handle.write_summary(&summary)?;
            (RunStatus::Failed, Some(message))
        }
    };
    handle.set_status(status)?;
    Ok(RunOutcome {
        run_id: handle.run_id().to_string(),
        point,
        seed,
        status,
        reused: false,
        error,
    })
}

fn config(handle: &RunHandle) -> &RunConfig {
    &handle.record().config
}

fn trained(handle: &RunHandle, data: &GeneratedData) -> Result<TrainingTrace> {
    let rc = config(handle);
    let schedule = rc
        .schedule
        .ok_or_else(|| Error::InvalidConfig("trajectory recipe needs a checkpoint schedule".into()))?;
    let mut rng = RngStream::new(rc.seed, TRAIN_STREAM);
    let trace = train(
        &rc.spec,
        &data.train,
        data.val.as_ref(),
        &rc.optimizer,
        &schedule,
        &mut rng,
    )?;
    handle.append_metrics(&trace.records)?;
    handle.write_loss_curve(&trace.loss_curve)?;
    Ok(trace)
}

fn running_summary(handle: &RunHandle, trace: &TrainingTrace) -> RunSummary {
    let rc = config(handle);
    let mut summary = RunSummary::new(RunStatus::Running, rc.point.clone(), rc.seed);
    summary.final_train_loss = trace.records.last().map(|r| r.train_loss);
    summary.diverged_at = trace.diverged_at;
    summary
}

/// Grokking recipe: train on the checkpoint grid, detect the grokking steps and measure the
/// LLC at both. Only the bracketing and final checkpoints are stored.
fn grokking_run(handle: &RunHandle, data: &GeneratedData, detector: &DetectorConfig) -> Result<RunSummary> {
    let rc = config(handle);
    let trace = trained(handle, data)?;
    let summary = running_summary(handle, &trace);
    if let Some(step) = trace.diverged_at {
        return Err(Error::Diverged { step });
    }
    if let Some(last) = trace.checkpoints.last() {
        handle.save_checkpoint(last.step, &last.params)?;
    }
    let Some(steps) = detect_grokking(&trace.records, detector)? else {
        handle.append_events(&[RunEvent::NoGrok])?;
        return Ok(summary);
    };
    let sgld = RngStream::new(rc.seed, SGLD_STREAM);
    let mut estimates = Vec::with_capacity(2);
    for step in [steps.i, steps.j] {
        let ckpt = trace
            .checkpoint(step)
            .ok_or_else(|| Error::Missing(format!("checkpoint at step {step}")))?;
        handle.save_checkpoint(step, &ckpt.params)?;
        let est = estimate_at(&rc.spec, &ckpt.params, &data.train, &rc.sgld, &sgld.child(step as u64))?;
        handle.append_llc(&[LlcRow::from_estimate(step, &est)])?;
        estimates.push(est);
    }
    let post = estimates.pop().expect("two estimates");
    let pre = estimates.pop().expect("two estimates");
    handle.append_events(&[RunEvent::Grok(GrokEvent::new(steps, pre, post))])?;
    Ok(summary)
}

/// Loss-transition recipe: LLC at every checkpoint, then both detectors on the dense loss
/// curve. Pairing failures (fewer than two transitions) are recorded, not fatal.
fn transition_run(handle: &RunHandle, data: &GeneratedData, detector: &DetectorConfig) -> Result<RunSummary> {
    let rc = config(handle);
    let trace = trained(handle, data)?;
    let summary = running_summary(handle, &trace);
    if let Some(step) = trace.diverged_at {
        return Err(Error::Diverged { step });
    }
    let sgld = RngStream::new(rc.seed, SGLD_STREAM);
    let mut rows = Vec::with_capacity(trace.checkpoints.len());
    for c in &trace.checkpoints {
        handle.save_checkpoint(c.step, &c.params)?;
        let est = estimate_at(&rc.spec, &c.params, &data.train, &rc.sgld, &sgld.child(c.step as u64))?;
        rows.push(LlcRow::from_estimate(c.step, &est));
    }
    handle.append_llc(&rows)?;

    let free: Vec<_> = super::analysis::free_energies(handle.record(), &rows);
    let mut events = Vec::new();
    for variant in DetectorVariant::BOTH {
        let cfg = DetectorConfig {
            variant,
            ..detector.clone()
        };
        let found = detect_loss_transitions(&trace, &cfg)?;
        let pairs = crate::transitions::pair_consecutive(&found.segments, &free);
        events.push(RunEvent::Transitions(found));
        match pairs {
            Ok(pairs) => events.push(RunEvent::TransitionPairs {
                variant,
                events: pairs,
            }),
            Err(e @ Error::FewerThanTwoTransitions { .. }) => events.push(RunEvent::Failure {
                stage: format!("pairing ({variant})"),
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    handle.append_events(&events)?;
    Ok(summary)
}

/// Scaling recipes: train to convergence, then measure the LLC once at the optimum.
fn scaling_run(handle: &RunHandle, data: &GeneratedData) -> Result<RunSummary> {
    let rc = config(handle);
    let mut rng = RngStream::new(rc.seed, TRAIN_STREAM);
    let init = rc.spec.init_params(&mut rng)?;
    let fit = converge_from(&rc.spec, init, &data.train, &rc.optimizer, &mut rng)?;
    // factored families are measured at the balanced point of their gauge orbit
    let anchor = rc.spec.balance(&fit.params);
    handle.save_checkpoint(fit.steps, &anchor)?;
    let mut summary = RunSummary::new(RunStatus::Running, rc.point.clone(), rc.seed);
    summary.final_train_loss = Some(fit.loss);
    summary.converged = Some(fit.converged);
    if let ModelSpec::Polynomial { degree } = rc.spec {
        summary.reference_loss = closed_form_loss(degree, data);
    }
    let est = estimate_at(
        &rc.spec,
        &anchor,
        &data.train,
        &rc.sgld,
        &RngStream::new(rc.seed, SGLD_STREAM),
    )?;
    handle.append_llc(&[LlcRow::from_estimate(fit.steps, &est)])?;
    summary.lambda_hat = Some(est.lambda_hat);
    summary.lambda_std = Some(est.std_dev);
    Ok(summary)
}

/// Training loss of the least-squares polynomial, when the design is well-posed.
fn closed_form_loss(degree: usize, data: &GeneratedData) -> Option<f64> {
    let xs = data.train.inputs.as_slice();
    let ys = data.train.real_targets().as_slice();
    let fit = poly_fit(xs, ys, degree).ok()?;
    let n = xs.len() as f64;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let pred: f64 = fit.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c);
            (pred - y).powi(2)
        })
        .sum();
    Some(sse / n)
}
