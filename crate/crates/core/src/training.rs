//! Optimizers, checkpoint scheduling and the two training loops (fixed budget with
//! checkpoints, and train-until-converged).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::RngStream;
use crate::models::{Dataset, Family, ModelSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Full,
    Fixed(usize),
}

/// Stop when the best loss improved by less than `rel_tol` (relative) over the last
/// `window` steps, or as soon as the loss drops below `abs_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub window: usize,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 200,
            rel_tol: 1e-5,
            abs_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: BatchSize,
    pub max_steps: usize,
    pub convergence: Convergence,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: BatchSize::Full,
            max_steps: 10_000,
            convergence: Convergence::default(),
        }
    }
}

impl OptimizerConfig {
    /// AdamW at lr 1e-3; modular addition adds weight decay 1e-2 and a 60k-step budget.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::ModularAddition => Self {
                weight_decay: 1e-2,
                max_steps: 60_000,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("optimizer: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.batch_size == BatchSize::Fixed(0) {
            return bad("batch size must be positive");
        }
        if self.convergence.window == 0 {
            return bad("convergence window must be positive");
        }
        Ok(())
    }
}

/// Optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        let moments = cfg.kind == OptimizerKind::AdamW;
        Self {
            cfg: cfg.clone(),
            m: if moments { vec![0.0; dim] } else { Vec::new() },
            v: if moments { vec![0.0; dim] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.iter_mut().zip(grad) {
                    *w -= lr * (g + wd * *w);
                }
            }
            OptimizerKind::AdamW => {
                self.t += 1;
                let (b1, b2) = self.cfg.betas;
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                let eps = self.cfg.eps;
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * params[i]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Logarithmic,
    /// Half the checkpoints linear, half logarithmic.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSchedule {
    pub spacing: Spacing,
    pub count: usize,
    pub total_steps: usize,
}

impl CheckpointSchedule {
    pub fn new(spacing: Spacing, count: usize, total_steps: usize) -> Self {
        Self {
            spacing,
            count,
            total_steps,
        }
    }
}

fn linear_steps(count: usize, total: usize) -> Vec<usize> {
    // round(k·total/count) in exact integer arithmetic
    let mut steps: Vec<usize> = (1..=count)
        .map(|k| (2 * k * total + count) / (2 * count))
        .filter(|&s| s >= 1)
        .collect();
    steps.dedup();
    steps
}

fn log_steps(count: usize, total: usize) -> Vec<usize> {
    if count == 1 {
        return vec![total];
    }
    let ln_total = (total as f64).ln();
    let mut steps: Vec<usize> = (0..count)
        .map(|k| {
            let s = (ln_total * k as f64 / (count - 1) as f64).exp().round() as usize;
            s.clamp(1, total)
        })
        .collect();
    steps[count - 1] = total;
    steps.dedup();
    steps
}

/// Strictly increasing steps in `[1, total_steps]` ending at `total_steps`.
pub fn checkpoint_steps(schedule: &CheckpointSchedule) -> Result<Vec<usize>> {
    let CheckpointSchedule {
        spacing,
        count,
        total_steps,
    } = *schedule;
    if count == 0 || total_steps == 0 {
        return Err(Error::InvalidConfig("checkpoint count and total steps must be positive".into()));
    }
    if count > total_steps {
        return Err(Error::CountExceedsSteps {
            count,
            total: total_steps,
        });
    }
    Ok(match spacing {
        Spacing::Linear => linear_steps(count, total_steps),
        Spacing::Logarithmic => log_steps(count, total_steps),
        Spacing::Mixed => {
            let lin = count.div_ceil(2);
            let log = (count / 2).max(1);
            let mut steps = linear_steps(lin, total_steps);
            steps.extend(log_steps(log, total_steps));
            steps.sort_unstable();
            steps.dedup();
            steps
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    /// Full-dataset metrics at each checkpoint step, sorted by step.
    pub records: Vec<MetricRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Optimizer-step training loss; entry `s - 1` is the batch loss evaluated during step `s`.
    pub loss_curve: Vec<f64>,
    /// First step whose loss was non-finite, when training blew up.
    pub diverged_at: Option<usize>,
}

impl TrainingTrace {
    pub fn checkpoint(&self, step: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.step == step)
    }

    pub fn record(&self, step: usize) -> Option<&MetricRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    /// `(step, loss)` pairs of the dense loss curve.
    pub fn loss_series(&self) -> Vec<(usize, f64)> {
        self.loss_curve.iter().enumerate().map(|(i, &l)| (i + 1, l)).collect()
    }
}

fn batch_indices(batch: BatchSize, n: usize, rng: &mut RngStream) -> Option<Vec<usize>> {
    match batch {
        BatchSize::Fixed(b) if b < n => Some(rng.sample_indices(n, b)),
        _ => None,
    }
}

fn metrics(
    spec: &ModelSpec,
    params: &[f64],
    step: usize,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<MetricRecord> {
    let classifier = spec.is_classifier();
    Ok(MetricRecord {
        step,
        train_loss: spec.loss_grad(params, train, None)?,
        val_loss: val.map(|v| spec.loss_grad(params, v, None)).transpose()?,
        train_acc: classifier.then(|| spec.accuracy(params, train)).transpose()?,
        val_acc: match val {
            Some(v) if classifier => Some(spec.accuracy(params, v)?),
            _ => None,
        },
    })
}

/// Fixed-budget training from a fresh initialization, recording metrics and parameter
/// snapshots at every checkpoint step. Training stops early only on divergence, in which
/// case the trace up to the failure is returned with `diverged_at` set.
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    opt: &OptimizerConfig,
    schedule: &CheckpointSchedule,
    rng: &mut RngStream,
) -> Result<TrainingTrace> {
    let init = spec.init_params(rng)?;
    train_from(spec, init, train_set, val_set, opt, schedule, rng)
}

pub fn train_from(
    spec: &ModelSpec,
    init: ParamVector,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    opt: &OptimizerConfig,
    schedule: &CheckpointSchedule,
    rng: &mut RngStream,
) -> Result<TrainingTrace> {
    opt.validate()?;
    if schedule.total_steps != opt.max_steps {
        return Err(Error::InvalidConfig(format!(
            "schedule covers {} steps but optimizer runs {}",
            schedule.total_steps, opt.max_steps
        )));
    }
    let steps = checkpoint_steps(schedule)?;
    let mut params = init;
    let mut grad = vec![0.0; params.len()];
    let mut optimizer = Optimizer::new(opt, params.len());
    let mut trace = TrainingTrace {
        loss_curve: Vec::with_capacity(opt.max_steps),
        ..Default::default()
    };
    let mut next = steps.iter().peekable();

    for step in 1..=opt.max_steps {
        let loss = match batch_indices(opt.batch_size, train_set.len(), rng) {
            Some(idx) => spec.loss_grad(&params.values, &train_set.select(&idx), Some(&mut grad)),
            None => spec.loss_grad(&params.values, train_set, Some(&mut grad)),
        };
        let loss = match loss {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => {
                trace.diverged_at = Some(step);
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        trace.loss_curve.push(loss);
        optimizer.step(&mut params.values, &grad);
        if params.values.iter().any(|v| !v.is_finite()) {
            trace.diverged_at = Some(step);
            return Ok(trace);
        }

        if next.peek() == Some(&&step) {
            next.next();
            match metrics(spec, &params.values, step, train_set, val_set) {
                Ok(rec) => trace.records.push(rec),
                Err(Error::NonFinite(_)) => {
                    trace.diverged_at = Some(step);
                    return Ok(trace);
                }
                Err(e) => return Err(e),
            }
            trace.checkpoints.push(Checkpoint {
                step,
                params: params.clone(),
            });
        }
    }
    Ok(trace)
}

/// Result of training to convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct Converged {
    /// Best-loss parameters seen.
    pub params: ParamVector,
    /// Full-dataset loss at `params`.
    pub loss: f64,
    pub steps: usize,
    /// False when the step budget ran out before the stopping rule fired.
    pub converged: bool,
}

/// Train from a fresh initialization until the loss stops improving (see [`Convergence`])
/// or `max_steps` is reached.
pub fn train_until_converged(
    spec: &ModelSpec,
    data: &Dataset,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<Converged> {
    let init = spec.init_params(rng)?;
    converge_from(spec, init, data, opt, rng)
}

pub fn converge_from(
    spec: &ModelSpec,
    init: ParamVector,
    data: &Dataset,
    opt: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<Converged> {
    opt.validate()?;
    let rule = opt.convergence;
    let mut params = init;
    let mut grad = vec![0.0; params.len()];
    let mut optimizer = Optimizer::new(opt, params.len());
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    // best loss after each step, for the windowed improvement test
    let mut history: Vec<f64> = Vec::with_capacity(opt.max_steps.min(1 << 20));
    let mut stopped = None;

    for step in 1..=opt.max_steps {
        let loss = match batch_indices(opt.batch_size, data.len(), rng) {
            Some(idx) => spec.loss_grad(&params.values, &data.select(&idx), Some(&mut grad)),
            None => spec.loss_grad(&params.values, data, Some(&mut grad)),
        };
        let loss = match loss {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if loss < best_loss {
            best_loss = loss;
            best.values.copy_from_slice(&params.values);
        }
        history.push(best_loss);
        if best_loss <= rule.abs_floor {
            stopped = Some(step);
            break;
        }
        if step > rule.window {
            let then = history[step - 1 - rule.window];
            if (then - best_loss) <= rule.rel_tol * then {
                stopped = Some(step);
                break;
            }
        }
        optimizer.step(&mut params.values, &grad);
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
    }
    // the last update is never evaluated inside the loop
    if let Ok(last) = spec.loss_grad(&params.values, data, None) {
        if last < best_loss {
            best = params;
        }
    }
    let loss = spec.loss_grad(&best.values, data, None)?;
    Ok(Converged {
        params: best,
        loss,
        steps: stopped.unwrap_or(opt.max_steps),
        converged: stopped.is_some(),
    })
}
