use slt_lab::experiments::analysis::{analyze, scaling_points};
use slt_lab::experiments::{run_experiment, ExperimentConfig, ExperimentId, Scale, Sweep};
use slt_lab::llc::{Beta, SgldConfig};
use slt_lab::registry::{Registry, RunEvent, RunStatus};
use slt_lab::training::{Convergence, OptimizerConfig, OptimizerKind};
use slt_lab::transitions::DetectorVariant;

fn quick_sgld(epsilon: f64, steps: usize) -> SgldConfig {
    SgldConfig {
        epsilon,
        steps,
        chains: 2,
        beta: Beta::OneOverLogN,
        ..SgldConfig::default()
    }
}

fn small_lowrank() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentId::Q2E2, Scale::Desk);
    cfg.sweep = Sweep {
        ranks: Some(vec![1, 3, 6]),
        d: Some(6),
        ..Sweep::default()
    };
    cfg.runs_per_point = Some(2);
    cfg.seeds = vec![11];
    cfg.optimizer = Some(OptimizerConfig {
        learning_rate: 1e-2,
        max_steps: 4000,
        ..OptimizerConfig::default()
    });
    cfg.sgld = Some(quick_sgld(1e-4, 300));
    cfg
}

#[test]
fn sweep_persists_and_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::new(dir.path());
    let cfg = small_lowrank();
    let report = run_experiment(&registry, &cfg).unwrap();
    assert_eq!(report.outcomes.len(), 6);
    assert_eq!(report.failed(), 0);
    assert!(report.outcomes.iter().all(|o| !o.reused));

    let runs: Vec<_> = registry
        .list_runs(Some(ExperimentId::Q2E2))
        .unwrap()
        .iter()
        .map(|r| registry.load_run(&r.run_id).unwrap())
        .collect();
    assert_eq!(runs.len(), 6);
    let reloaded = analyze(ExperimentId::Q2E2, &runs, &cfg.detector).unwrap();
    assert_eq!(reloaded, report.summary);
    let stored: slt_lab::experiments::ExperimentSummary =
        registry.read_experiment_summary(ExperimentId::Q2E2).unwrap();
    assert_eq!(stored, report.summary);

    // each point mean is the mean of that point's stored rows
    for p in scaling_points(&runs) {
        let rows: Vec<f64> = runs
            .iter()
            .filter(|r| r.record.config.point.difficulty == Some(p.difficulty))
            .map(|r| r.llc.last().unwrap().lambda_hat)
            .collect();
        assert_eq!(p.repeats, rows.len());
        assert_eq!(p.lambda_mean, rows.iter().sum::<f64>() / rows.len() as f64);
    }
    let scaling = report.summary.scaling.as_ref().unwrap();
    assert_eq!(scaling.fits.len(), 1);
    assert_eq!(scaling.fits[0].degree, 2);
    assert_eq!(scaling.fits[0].theory, vec![0.0, 6.0, -0.5]);
}

#[test]
fn resumed_sweep_skips_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::new(dir.path());
    let mut cfg = small_lowrank();
    cfg.sweep.ranks = Some(vec![2]);
    let first = run_experiment(&registry, &cfg).unwrap();
    let second = run_experiment(&registry, &cfg).unwrap();
    assert!(second.outcomes.iter().all(|o| o.reused));
    let ids = |r: &slt_lab::experiments::SweepReport| -> Vec<String> {
        r.outcomes.iter().map(|o| o.run_id.clone()).collect()
    };
    assert_eq!(ids(&first), ids(&second));
    assert_eq!(first.summary, second.summary);
    assert_eq!(registry.list_runs(None).unwrap().len(), 2);

    cfg.resume = false;
    let third = run_experiment(&registry, &cfg).unwrap();
    assert!(third.outcomes.iter().all(|o| !o.reused));
    assert_eq!(registry.list_runs(None).unwrap().len(), 4);
}

#[test]
fn diverging_point_is_recorded_and_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::new(dir.path());
    let mut cfg = ExperimentConfig::new(ExperimentId::Q2E1, Scale::Desk);
    // plain gradient descent at this rate is stable for inputs in [-0.5, 0.5] and blows up
    // on [-4, 4], where the degree-3 Hessian has eigenvalues in the thousands
    cfg.sweep = Sweep {
        degrees: Some(vec![3]),
        half_widths: Some(vec![0.5, 4.0]),
        ..Sweep::default()
    };
    cfg.runs_per_point = Some(1);
    cfg.optimizer = Some(OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: 0.05,
        max_steps: 3000,
        convergence: Convergence {
            abs_floor: 1e-3,
            ..Convergence::default()
        },
        ..OptimizerConfig::default()
    });
    cfg.sgld = Some(quick_sgld(1e-4, 200));
    let report = run_experiment(&registry, &cfg).unwrap();
    assert_eq!(report.failed(), 1);
    let failed = report
        .outcomes
        .iter()
        .find(|o| o.status == RunStatus::Failed)
        .unwrap();
    assert_eq!(failed.point.half_width, Some(4.0));
    assert!(failed.error.as_deref().unwrap().contains("diverged"));
    let run = registry.load_run(&failed.run_id).unwrap();
    assert!(matches!(run.events.last(), Some(RunEvent::Failure { .. })));
    assert_eq!(run.summary.unwrap().status, RunStatus::Failed);

    let scaling = report.summary.scaling.unwrap();
    assert_eq!(scaling.points.len(), 1);
    assert_eq!(scaling.excluded_runs, 1);
    assert_eq!(report.summary.failed_runs, 1);
}

#[test]
fn transition_recipe_records_both_detectors() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::new(dir.path());
    let mut cfg = ExperimentConfig::new(ExperimentId::Q1E2, Scale::Desk);
    cfg.runs_per_point = Some(2);
    cfg.total_steps = Some(400);
    cfg.sgld = Some(quick_sgld(5e-4, 40));
    let report = run_experiment(&registry, &cfg).unwrap();
    assert_eq!(report.failed(), 0);
    assert_eq!(report.summary.transitions.len(), 2);
    assert_eq!(report.summary.transitions[0].variant, DetectorVariant::Smoothing);
    assert_eq!(report.summary.transitions[1].variant, DetectorVariant::Raw);
    for v in &report.summary.transitions {
        assert_eq!(v.runs_used + v.runs_excluded, 2);
    }
    let run = registry.load_run(&report.outcomes[0].run_id).unwrap();
    assert_eq!(run.trace.loss_curve.len(), 400);
    assert_eq!(run.llc.len(), run.trace.records.len());
    assert_eq!(run.trace.checkpoints.len(), run.trace.records.len());
    let variants: Vec<DetectorVariant> = run
        .events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Transitions(t) => Some(t.variant),
            _ => None,
        })
        .collect();
    assert_eq!(variants, vec![DetectorVariant::Smoothing, DetectorVariant::Raw]);
}

#[test]
fn grokking_recipe_stores_bracketing_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::new(dir.path());
    let mut cfg = ExperimentConfig::new(ExperimentId::Q1E1, Scale::Desk);
    cfg.sweep.p = Some(5);
    cfg.runs_per_point = Some(2);
    cfg.total_steps = Some(300);
    cfg.sgld = Some(quick_sgld(1e-3, 30));
    let report = run_experiment(&registry, &cfg).unwrap();
    assert_eq!(report.failed(), 0);
    let g = report.summary.grokking.as_ref().unwrap();
    assert_eq!(g.runs, 2);
    assert_eq!(g.grokked, g.events.len());
    for o in &report.outcomes {
        let run = registry.load_run(&o.run_id).unwrap();
        assert_eq!(run.record.train_size, 10);
        assert_eq!(run.trace.records.len(), 100);
        let steps: Vec<usize> = run.trace.checkpoints.iter().map(|c| c.step).collect();
        match &run.events[..] {
            [RunEvent::Grok(ev)] => {
                assert_eq!(run.llc.len(), 2);
                assert_eq!(steps, vec![ev.i, ev.j, 300]);
            }
            [RunEvent::NoGrok] => {
                assert!(run.llc.is_empty());
                assert_eq!(steps, vec![300]);
            }
            other => panic!("unexpected events {other:?}"),
        }
    }
}
