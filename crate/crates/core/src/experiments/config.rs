use serde::{Deserialize, Serialize};

use super::ExperimentId;
use crate::error::{Error, Result};
use crate::llc::{default_sgld_config, SgldConfig};
use crate::models::{ModelSpec, TaskParams};
use crate::registry::{GridPoint, RunConfig};
use crate::training::{BatchSize, CheckpointSchedule, Convergence, OptimizerConfig, Spacing};
use crate::transitions::DetectorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// The original sweep sizes; days of CPU time.
    Paper,
    /// Reduced grids and repeat counts that finish in minutes to hours on a workstation.
    #[default]
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::InvalidConfig(format!(
                "unknown scale `{other}` (expected paper or desk)"
            ))),
        }
    }
}

/// Family-specific grid. Unset fields take the recipe default for the chosen scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub degrees: Option<Vec<usize>>,
    pub ranks: Option<Vec<usize>>,
    /// Half-widths `h` of the input intervals `[−h, h]`.
    pub half_widths: Option<Vec<f64>>,
    /// Ambient dimension for the low-rank and autoencoder recipes.
    pub d: Option<usize>,
    /// Modulus for the grokking recipe.
    pub p: Option<usize>,
}

/// A sweep request as read from a JSON config file. Everything except `experiment_id` has a
/// per-recipe default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: ExperimentId,
    #[serde(default)]
    pub scale: Scale,
    /// Seed of repeat `k`; repeats beyond the list continue from its last entry.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: Sweep,
    /// Repeats per grid point, or total runs for the single-point recipes.
    #[serde(default)]
    pub runs_per_point: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub sgld: Option<SgldConfig>,
    #[serde(default)]
    pub task: Option<TaskParams>,
    /// Fixed training budget for the trajectory recipes.
    #[serde(default)]
    pub total_steps: Option<usize>,
    #[serde(default)]
    pub detector: DetectorConfig,
    /// Reuse finished runs with an identical run config.
    #[serde(default = "yes")]
    pub resume: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(experiment_id: ExperimentId, scale: Scale) -> Self {
        Self {
            experiment_id,
            scale,
            seeds: default_seeds(),
            sweep: Sweep::default(),
            runs_per_point: None,
            workers: 0,
            optimizer: None,
            sgld: None,
            task: None,
            total_steps: None,
            detector: DetectorConfig::default(),
            resume: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            let at = format!("line {} column {}", inner.line(), inner.column());
            Error::InvalidConfig(if path == "." { format!("{at}: {inner}") } else { format!("{path}: {at}: {inner}") })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, m: &str| Err(Error::InvalidConfig(format!("{field}: {m}")));
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed");
        }
        if self.runs_per_point == Some(0) {
            return bad("runs_per_point", "must be at least 1");
        }
        if let Some(degrees) = &self.sweep.degrees {
            if degrees.is_empty() {
                return bad("sweep.degrees", "empty grid");
            }
        }
        if let Some(ranks) = &self.sweep.ranks {
            if ranks.is_empty() || ranks.contains(&0) {
                return bad("sweep.ranks", "ranks must be non-empty and at least 1");
            }
            let d = self.dimension();
            if let Some(r) = ranks.iter().find(|&&r| r > d) {
                return bad("sweep.ranks", &format!("rank {r} exceeds d = {d}"));
            }
        }
        if let Some(hw) = &self.sweep.half_widths {
            if hw.is_empty() || hw.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return bad("sweep.half_widths", "half-widths must be positive");
            }
        }
        if let Some(p) = self.sweep.p {
            if p < 2 {
                return bad("sweep.p", "modulus must be at least 2");
            }
        }
        if self.total_steps == Some(0) {
            return bad("total_steps", "must be positive");
        }
        if let Some(opt) = &self.optimizer {
            opt.validate()?;
        }
        if let Some(sgld) = &self.sgld {
            sgld.validate()?;
        }
        self.detector.validate()?;
        Ok(())
    }

    pub fn repeats(&self) -> usize {
        self.runs_per_point.unwrap_or(match (self.experiment_id, self.scale) {
            (ExperimentId::Q1E1, Scale::Paper) => 500,
            (ExperimentId::Q1E1, Scale::Desk) => 50,
            (ExperimentId::Q1E2, Scale::Paper) => 60,
            (ExperimentId::Q1E2, Scale::Desk) => 20,
            (_, Scale::Paper) => 10,
            (_, Scale::Desk) => 3,
        })
    }

    pub fn seed(&self, repeat: usize) -> u64 {
        match self.seeds.get(repeat) {
            Some(&s) => s,
            None => {
                let last = *self.seeds.last().expect("validated non-empty");
                last.wrapping_add((repeat + 1 - self.seeds.len()) as u64)
            }
        }
    }

    pub fn dimension(&self) -> usize {
        self.sweep.d.unwrap_or(100)
    }

    pub fn modulus(&self) -> usize {
        self.sweep.p.unwrap_or(match self.scale {
            Scale::Paper => 53,
            Scale::Desk => 13,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.sweep.degrees.clone().unwrap_or_else(|| match self.scale {
            Scale::Paper => log_spaced(1, 1000, 20),
            Scale::Desk => log_spaced(1, 200, 8),
        })
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.sweep
            .half_widths
            .clone()
            .unwrap_or_else(|| match self.scale {
                Scale::Paper => vec![1.0, 0.75, 0.5],
                Scale::Desk => vec![1.0, 0.5],
            })
    }

    pub fn ranks(&self) -> Vec<usize> {
        let d = self.dimension();
        self.sweep.ranks.clone().unwrap_or_else(|| {
            match (self.experiment_id, self.scale) {
                (ExperimentId::Q2E3, Scale::Paper) => linear_spaced(5.min(d), d, 20),
                (ExperimentId::Q2E3, Scale::Desk) => linear_spaced(5.min(d), d, 8),
                (_, Scale::Paper) => linear_spaced(1, d, 20),
                (_, Scale::Desk) => linear_spaced(1, d, 10),
            }
        })
    }

    pub fn steps(&self) -> usize {
        self.total_steps.unwrap_or(match (self.experiment_id, self.scale) {
            (ExperimentId::Q1E1, Scale::Paper) => 40_000,
            (ExperimentId::Q1E1, Scale::Desk) => 20_000,
            _ => 4500,
        })
    }

    /// Recipe defaults, or `self.optimizer` when given. Trajectory recipes always train for
    /// [`Self::steps`] so the checkpoint schedule lines up.
    pub fn optimizer_for(&self, spec: &ModelSpec) -> OptimizerConfig {
        if let Some(opt) = &self.optimizer {
            let mut opt = opt.clone();
            if matches!(self.experiment_id, ExperimentId::Q1E1 | ExperimentId::Q1E2) {
                opt.max_steps = self.steps();
            }
            return opt;
        }
        let base = OptimizerConfig::for_family(spec.family());
        match self.experiment_id {
            ExperimentId::Q1E1 => OptimizerConfig {
                learning_rate: 1e-3,
                weight_decay: 1.0,
                max_steps: self.steps(),
                ..base
            },
            // full-batch training decreases the loss monotonically, which leaves a single
            // drop segment; minibatches give the detectors something to separate
            ExperimentId::Q1E2 => OptimizerConfig {
                learning_rate: 3e-3,
                batch_size: BatchSize::Fixed(512),
                max_steps: self.steps(),
                ..base
            },
            // high-degree monomial designs are too ill-conditioned for the relative plateau
            // rule; noise-free targets make an absolute floor meaningful
            ExperimentId::Q2E1 => OptimizerConfig {
                learning_rate: 1e-2,
                max_steps: 20_000,
                convergence: Convergence {
                    abs_floor: 1e-6,
                    ..Convergence::default()
                },
                ..base
            },
            ExperimentId::Q2E2 => OptimizerConfig {
                learning_rate: 1e-2,
                max_steps: 20_000,
                ..base
            },
            ExperimentId::Q2E3 => OptimizerConfig {
                learning_rate: 1e-3,
                max_steps: 30_000,
                convergence: Convergence {
                    window: 1000,
                    rel_tol: 1e-4,
                    ..Convergence::default()
                },
                ..base
            },
        }
    }

    pub fn sgld(&self) -> SgldConfig {
        if let Some(s) = &self.sgld {
            return s.clone();
        }
        let base = default_sgld_config(self.experiment_id);
        match (self.experiment_id, self.scale) {
            // the summed-over-outputs loss makes the low-rank posterior stiff enough that
            // larger steps inflate λ̂ at high rank; 1e-5 is within a few percent of the ε → 0 limit
            (ExperimentId::Q2E2, Scale::Desk) => SgldConfig {
                epsilon: 1e-5,
                steps: 60_000,
                ..base
            },
            _ => base,
        }
    }

    pub fn task_for(&self, spec: &ModelSpec) -> TaskParams {
        self.task
            .clone()
            .unwrap_or_else(|| TaskParams::for_family(spec.family()))
    }

    pub fn schedule(&self) -> Option<CheckpointSchedule> {
        match self.experiment_id {
            ExperimentId::Q1E1 => Some(CheckpointSchedule::new(Spacing::Linear, 100, self.steps())),
            ExperimentId::Q1E2 => Some(CheckpointSchedule::new(Spacing::Mixed, 100, self.steps())),
            _ => None,
        }
    }

    /// Every `(grid point, repeat)` run of the sweep, in a fixed order.
    pub fn plan(&self) -> Result<Vec<RunConfig>> {
        self.validate()?;
        let mut points: Vec<(ModelSpec, GridPoint, Option<f64>)> = Vec::new();
        match self.experiment_id {
            ExperimentId::Q1E1 => {
                points.push((ModelSpec::modular_addition(self.modulus()), GridPoint::single(), None))
            }
            ExperimentId::Q1E2 => points.push((ModelSpec::tms(), GridPoint::single(), None)),
            ExperimentId::Q2E1 => {
                for &h in &self.half_widths() {
                    for &degree in &self.degrees() {
                        points.push((
                            ModelSpec::polynomial(degree),
                            GridPoint {
                                label: format!("degree={degree},half_width={h}"),
                                difficulty: Some(degree as f64),
                                half_width: Some(h),
                            },
                            Some(h),
                        ));
                    }
                }
            }
            ExperimentId::Q2E2 | ExperimentId::Q2E3 => {
                let d = self.dimension();
                for &r in &self.ranks() {
                    let spec = if self.experiment_id == ExperimentId::Q2E2 {
                        ModelSpec::low_rank(d, r)
                    } else {
                        ModelSpec::autoencoder(d, r)
                    };
                    points.push((
                        spec,
                        GridPoint {
                            label: format!("rank={r}"),
                            difficulty: Some(r as f64),
                            half_width: None,
                        },
                        None,
                    ));
                }
            }
        }
        let sgld = self.sgld();
        let schedule = self.schedule();
        let mut runs = Vec::new();
        for (spec, point, half_width) in points {
            spec.validate()?;
            let mut task = self.task_for(&spec);
            if let Some(h) = half_width {
                task.half_width = h;
            }
            for k in 0..self.repeats() {
                runs.push(RunConfig {
                    spec: spec.clone(),
                    task: task.clone(),
                    optimizer: self.optimizer_for(&spec),
                    schedule,
                    sgld: sgld.clone(),
                    seed: self.seed(k),
                    point: point.clone(),
                });
            }
        }
        Ok(runs)
    }
}

/// `count` integers spaced evenly in log between `lo` and `hi`, each rounded to nearest and
/// bumped to stay strictly increasing.
pub fn log_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    spaced(lo, hi, count, true)
}

/// `count` integers spaced evenly between `lo` and `hi`, rounded to nearest.
pub fn linear_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    spaced(lo, hi, count, false)
}

fn spaced(lo: usize, hi: usize, count: usize, log: bool) -> Vec<usize> {
    assert!(lo >= 1 && lo <= hi && count >= 1, "bad grid request");
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = if log {
        ((lo as f64).ln(), (hi as f64).ln())
    } else {
        (lo as f64, hi as f64)
    };
    let mut out: Vec<usize> = Vec::with_capacity(count);
    for k in 0..count {
        let t = a + (b - a) * k as f64 / (count - 1) as f64;
        let v = if k + 1 == count {
            hi
        } else {
            (if log { t.exp() } else { t }).round() as usize
        };
        let v = match out.last() {
            Some(&prev) if v <= prev => prev + 1,
            _ => v,
        };
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Nearest-integer grid by direct search: for each target, scan candidates for the
    /// closest one, then apply the strict-increase bump.
    fn grid_oracle(lo: usize, hi: usize, count: usize, log: bool) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for k in 0..count {
            let t = if count == 1 {
                lo as f64
            } else if log {
                (lo as f64).powf(1.0 - k as f64 / (count - 1) as f64)
                    * (hi as f64).powf(k as f64 / (count - 1) as f64)
            } else {
                lo as f64 + (hi - lo) as f64 * k as f64 / (count - 1) as f64
            };
            let mut best = lo;
            for c in lo..=hi {
                // ties go up, as with round-half-away on positive values
                if (c as f64 - t).abs() <= (best as f64 - t).abs() {
                    best = c;
                }
            }
            if count > 1 && k + 1 == count {
                best = hi;
            }
            if let Some(&prev) = out.last() {
                best = best.max(prev + 1);
            }
            out.push(best);
        }
        out
    }

    #[test]
    fn desk_grids() {
        assert_eq!(log_spaced(1, 200, 8), vec![1, 2, 5, 10, 21, 44, 94, 200]);
        assert_eq!(linear_spaced(1, 100, 10), vec![1, 12, 23, 34, 45, 56, 67, 78, 89, 100]);
        assert_eq!(linear_spaced(5, 100, 8), vec![5, 19, 32, 46, 59, 73, 86, 100]);
        let paper = log_spaced(1, 1000, 20);
        assert_eq!(paper.len(), 20);
        assert_eq!((paper[0], paper[19]), (1, 1000));
    }

    proptest! {
        #[test]
        fn grids_match_search_oracle(lo in 1usize..20, span in 0usize..400, count in 1usize..25, log in any::<bool>()) {
            let hi = lo + span;
            let got = spaced(lo, hi, count, log);
            prop_assert_eq!(&got, &grid_oracle(lo, hi, count, log));
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn seeds_extend_past_list() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Q2E2, Scale::Desk);
        cfg.seeds = vec![7, 3];
        assert_eq!((cfg.seed(0), cfg.seed(1), cfg.seed(2), cfg.seed(4)), (7, 3, 4, 6));
    }

    #[test]
    fn desk_plans() {
        let count = |id| ExperimentConfig::new(id, Scale::Desk).plan().unwrap();
        let q1 = count(ExperimentId::Q1E1);
        assert_eq!(q1.len(), 50);
        assert_eq!(q1[0].spec, ModelSpec::modular_addition(13));
        assert_eq!(q1[0].schedule, Some(CheckpointSchedule::new(Spacing::Linear, 100, 20_000)));
        let q2 = count(ExperimentId::Q1E2);
        assert_eq!(q2.len(), 20);
        assert_eq!(q2[0].schedule, Some(CheckpointSchedule::new(Spacing::Mixed, 100, 4500)));
        assert_eq!(q2[0].optimizer.max_steps, 4500);
        assert_eq!(count(ExperimentId::Q2E1).len(), 2 * 8 * 3);
        let q22 = count(ExperimentId::Q2E2);
        assert_eq!(q22.len(), 30);
        assert_eq!(q22[29].spec, ModelSpec::low_rank(100, 100));
        assert_eq!(q22[0].sgld.epsilon, 1e-5);
        let q23 = count(ExperimentId::Q2E3);
        assert_eq!(q23.len(), 24);
        assert_eq!(q23[0].sgld.epsilon, 1e-5);
        // distinct seeds give distinct configs and so distinct resume keys
        let hashes: std::collections::HashSet<u64> = q22.iter().map(|r| r.hash()).collect();
        assert_eq!(hashes.len(), 30);
    }

    #[test]
    fn paper_scale_grids() {
        let cfg = ExperimentConfig::new(ExperimentId::Q2E1, Scale::Paper);
        assert_eq!(cfg.degrees().len(), 20);
        assert_eq!(cfg.half_widths(), vec![1.0, 0.75, 0.5]);
        assert_eq!(cfg.repeats(), 10);
        assert_eq!(ExperimentConfig::new(ExperimentId::Q1E1, Scale::Paper).modulus(), 53);
        assert_eq!(ExperimentConfig::new(ExperimentId::Q1E1, Scale::Paper).repeats(), 500);
        assert_eq!(ExperimentConfig::new(ExperimentId::Q1E2, Scale::Paper).repeats(), 60);
        let ranks = ExperimentConfig::new(ExperimentId::Q2E2, Scale::Paper).ranks();
        assert_eq!((ranks.len(), ranks[0], ranks[19]), (20, 1, 100));
    }

    #[test]
    fn json_config_errors_name_the_field() {
        let ok = ExperimentConfig::from_json(r#"{"experiment_id":"Q2E2","scale":"desk","seeds":[1,2]}"#).unwrap();
        assert_eq!(ok.seeds, vec![1, 2]);
        let err = ExperimentConfig::from_json(r#"{"experiment_id":"Q9"}"#).unwrap_err();
        assert!(err.to_string().contains("Q9"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"experiment_id":"Q2E2","seeds":[]}"#).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"experiment_id":"Q2E3","sweep":{"ranks":[0]}}"#).unwrap_err();
        assert!(err.to_string().contains("sweep.ranks"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"experiment_id":"Q2E2","sweep":{"ranks":[101]}}"#).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"experiment_id":"Q2E2","bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!("PAPER".parse::<Scale>().is_ok() && "huge".parse::<Scale>().is_err());
    }
}
