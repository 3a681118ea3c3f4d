//! The five-family model zoo. Every family exposes a batch-mean loss with an exact analytic
//! gradient over a flat parameter vector, plus dataset generation and initialization.

mod autoencoder;
mod lowrank;
mod modular;
pub(crate) mod nn;
mod poly;
mod tms;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngStream};

pub use poly::polynomial_dataset;

/// One model family with its architecture constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `(a, b) ↦ a + b mod p`: shared token embedding, concatenation, one ReLU hidden
    /// layer, linear readout to `p` logits.
    ModularAddition {
        p: usize,
        embed: usize,
        hidden: usize,
    },
    /// `x̂ = ReLU(WᵀWx + b)` with `W ∈ R^{hidden × features}`; `importance_decay` gives
    /// feature importances `I_i = decay^i`.
    Tms {
        features: usize,
        hidden: usize,
        importance_decay: f64,
    },
    /// `f(x) = Σ_{i≤degree} a_i x^i`.
    Polynomial { degree: usize },
    /// `f(x) = W₂W₁x`, `W₁ ∈ R^{r×d}`, `W₂ ∈ R^{d×r}`.
    LowRank { d: usize, r: usize },
    /// `d → hidden → r → hidden → d` with ReLU after each `hidden` layer.
    Autoencoder { d: usize, hidden: usize, r: usize },
}

impl ModelSpec {
    pub fn modular_addition(p: usize) -> Self {
        ModelSpec::ModularAddition {
            p,
            embed: 64,
            hidden: 128,
        }
    }

    pub fn tms() -> Self {
        ModelSpec::Tms {
            features: 6,
            hidden: 2,
            importance_decay: 1.0,
        }
    }

    pub fn polynomial(degree: usize) -> Self {
        ModelSpec::Polynomial { degree }
    }

    pub fn low_rank(d: usize, r: usize) -> Self {
        ModelSpec::LowRank { d, r }
    }

    pub fn autoencoder(d: usize, r: usize) -> Self {
        ModelSpec::Autoencoder { d, hidden: 128, r }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::ModularAddition { .. } => Family::ModularAddition,
            ModelSpec::Tms { .. } => Family::Tms,
            ModelSpec::Polynomial { .. } => Family::Polynomial,
            ModelSpec::LowRank { .. } => Family::LowRank,
            ModelSpec::Autoencoder { .. } => Family::Autoencoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{self}: {what}")));
        match *self {
            ModelSpec::ModularAddition { p, embed, hidden } => {
                if p < 2 || embed == 0 || hidden == 0 {
                    return bad("p >= 2 and positive widths required");
                }
            }
            ModelSpec::Tms {
                features,
                hidden,
                importance_decay,
            } => {
                if features == 0 || hidden == 0 || !(importance_decay > 0.0) {
                    return bad("positive dimensions and importance decay required");
                }
            }
            ModelSpec::Polynomial { .. } => {}
            ModelSpec::LowRank { d, r } => {
                if d == 0 || r == 0 || r > d {
                    return bad("need 1 <= r <= d");
                }
            }
            ModelSpec::Autoencoder { d, hidden, r } => {
                if d == 0 || hidden == 0 || r == 0 || r > d {
                    return bad("need 1 <= r <= d and hidden >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let segs: Vec<(&str, Vec<usize>)> = match *self {
            ModelSpec::ModularAddition { p, embed, hidden } => vec![
                ("embed", vec![p, embed]),
                ("w1", vec![hidden, 2 * embed]),
                ("b1", vec![hidden]),
                ("w2", vec![p, hidden]),
                ("b2", vec![p]),
            ],
            ModelSpec::Tms {
                features, hidden, ..
            } => vec![("w", vec![hidden, features]), ("b", vec![features])],
            ModelSpec::Polynomial { degree } => vec![("coef", vec![degree + 1])],
            ModelSpec::LowRank { d, r } => vec![("w1", vec![r, d]), ("w2", vec![d, r])],
            ModelSpec::Autoencoder { d, hidden, r } => vec![
                ("enc1.w", vec![hidden, d]),
                ("enc1.b", vec![hidden]),
                ("enc2.w", vec![r, hidden]),
                ("enc2.b", vec![r]),
                ("dec1.w", vec![hidden, r]),
                ("dec1.b", vec![hidden]),
                ("dec2.w", vec![d, hidden]),
                ("dec2.b", vec![d]),
            ],
        };
        Layout::new(segs)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    /// Feature count of one input row.
    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::ModularAddition { .. } => 2,
            ModelSpec::Tms { features, .. } => features,
            ModelSpec::Polynomial { .. } => 1,
            ModelSpec::LowRank { d, .. } | ModelSpec::Autoencoder { d, .. } => d,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            ModelSpec::ModularAddition { p, .. } => p,
            _ => self.input_dim(),
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, ModelSpec::ModularAddition { .. })
    }

    /// Weights `~ N(0, 1/fan_in)`, biases zero, polynomial coefficients `~ U[-0.1, 0.1]`.
    pub fn init_params(&self, rng: &mut RngStream) -> Result<ParamVector> {
        self.validate()?;
        let layout = Arc::new(self.layout());
        let mut values = vec![0.0; layout.len()];
        if let ModelSpec::Polynomial { .. } = self {
            for v in &mut values {
                *v = rng.uniform(-0.1, 0.1);
            }
            return Ok(ParamVector { values, layout });
        }
        for seg in layout.segments() {
            if seg.shape.len() != 2 {
                continue;
            }
            // an embedding table is a linear map from a one-hot vector of length shape[0]
            let fan_in = if seg.name == "embed" {
                seg.shape[0]
            } else {
                seg.shape[1]
            };
            let std = 1.0 / (fan_in as f64).sqrt();
            rng.fill_normal(&mut values[seg.range()], std);
        }
        Ok(ParamVector { values, layout })
    }

    fn check(&self, params: &[f64], data: &Dataset) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{self} expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if data.inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{self} expects {} input columns, got {}",
                self.input_dim(),
                data.inputs.cols()
            )));
        }
        match (&data.targets, self.is_classifier()) {
            (Targets::Classes(c), true) => {
                let p = self.output_dim();
                if c.iter().any(|&y| y >= p) {
                    return Err(Error::DimensionMismatch("class label out of range".into()));
                }
            }
            (Targets::Real(t), false) if t.cols() == self.output_dim() => {}
            _ => {
                return Err(Error::DimensionMismatch(format!(
                    "target kind does not match {self}"
                )))
            }
        }
        Ok(())
    }

    /// Batch-mean loss, and its gradient written into `grad` when given.
    pub fn loss_grad(&self, params: &[f64], data: &Dataset, grad: Option<&mut [f64]>) -> Result<f64> {
        self.check(params, data)?;
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let grad = match grad {
            Some(g) => {
                if g.len() != params.len() {
                    return Err(Error::DimensionMismatch("gradient buffer length".into()));
                }
                g.fill(0.0);
                Some(g)
            }
            None => None,
        };
        let loss = match *self {
            ModelSpec::ModularAddition { p, embed, hidden } => {
                modular::loss_grad(p, embed, hidden, params, data, grad)
            }
            ModelSpec::Tms {
                features,
                hidden,
                importance_decay,
            } => tms::loss_grad(features, hidden, importance_decay, params, data, grad),
            ModelSpec::Polynomial { .. } => poly::loss_grad(params, data, grad),
            ModelSpec::LowRank { d, r } => lowrank::loss_grad(d, r, params, data, grad),
            ModelSpec::Autoencoder { d, hidden, r } => {
                autoencoder::loss_grad(d, hidden, r, params, data, grad)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("{self} loss")));
        }
        Ok(loss)
    }

    pub fn forward_loss(&self, params: &ParamVector, data: &Dataset) -> Result<f64> {
        self.loss_grad(&params.values, data, None)
    }

    pub fn grad(&self, params: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        let mut g = vec![0.0; params.len()];
        self.loss_grad(&params.values, data, Some(&mut g))?;
        Ok(ParamVector {
            values: g,
            layout: params.layout.clone(),
        })
    }

    /// Move `params` along a loss-preserving symmetry to a better-conditioned point. For the
    /// low-rank family this rescales `(W₂, W₁) → (W₂/c, c·W₁)` so both factors have equal
    /// Frobenius norm; every other family is returned unchanged.
    pub fn balance(&self, params: &ParamVector) -> ParamVector {
        match *self {
            ModelSpec::LowRank { d, r } => {
                let (w1, w2) = params.values.split_at(r * d);
                let n1 = crate::math::norm(w1);
                let n2 = crate::math::norm(w2);
                if !(n1 > 0.0 && n2 > 0.0) {
                    return params.clone();
                }
                let c = (n2 / n1).sqrt();
                let values = w1.iter().map(|v| v * c).chain(w2.iter().map(|v| v / c)).collect();
                params.with_values(values)
            }
            _ => params.clone(),
        }
    }

    /// Fraction of argmax-correct predictions, ties going to the lowest class index.
    pub fn accuracy(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        match *self {
            ModelSpec::ModularAddition { p, embed, hidden } => {
                self.check(params, data)?;
                if data.is_empty() {
                    return Err(Error::InvalidConfig("empty dataset".into()));
                }
                Ok(modular::accuracy(p, embed, hidden, params, data))
            }
            _ => Err(Error::NotClassification),
        }
    }

    /// Build a dataset for this family. Modular addition returns a train/validation split.
    pub fn generate_dataset(&self, task: &TaskParams, rng: &mut RngStream) -> Result<GeneratedData> {
        self.validate()?;
        task.validate()?;
        match *self {
            ModelSpec::ModularAddition { p, .. } => modular::generate(p, task, rng),
            ModelSpec::Tms { features, .. } => tms::generate(features, task, rng),
            ModelSpec::Polynomial { degree } => poly::generate(self, degree, task, rng),
            ModelSpec::LowRank { d, r } => lowrank::generate(self, d, r, task, rng),
            ModelSpec::Autoencoder { d, r, .. } => autoencoder::generate(d, r, task, rng),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelSpec::ModularAddition { p, embed, hidden } => {
                write!(f, "modular_addition(p={p}, embed={embed}, hidden={hidden})")
            }
            ModelSpec::Tms {
                features,
                hidden,
                importance_decay,
            } => write!(
                f,
                "tms(features={features}, hidden={hidden}, importance_decay={importance_decay})"
            ),
            ModelSpec::Polynomial { degree } => write!(f, "polynomial(degree={degree})"),
            ModelSpec::LowRank { d, r } => write!(f, "low_rank(d={d}, r={r})"),
            ModelSpec::Autoencoder { d, hidden, r } => {
                write!(f, "autoencoder(d={d}, hidden={hidden}, r={r})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ModularAddition,
    Tms,
    Polynomial,
    LowRank,
    Autoencoder,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::ModularAddition => "modular_addition",
            Family::Tms => "tms",
            Family::Polynomial => "polynomial",
            Family::LowRank => "low_rank",
            Family::Autoencoder => "autoencoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered named segments that exactly partition a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    fn new(parts: Vec<(&str, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment {
                    name: name.to_string(),
                    offset,
                    shape,
                };
                offset += seg.len();
                seg
            })
            .collect();
        Layout { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// FNV-1a over `name:shape` pairs, rendered as 16 hex digits.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for s in &self.segments {
            let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
            text.push_str(&format!("{}:{};", s.name, dims.join("x")));
        }
        format!("{:016x}", crate::fnv1a64(text.as_bytes()))
    }
}

/// Flat parameter state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        let layout = spec.layout();
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "{spec} expects {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self {
            values,
            layout: Arc::new(layout),
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        Self {
            values: vec![0.0; layout.len()],
            layout: Arc::new(layout),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: self.layout.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Matrix),
    Classes(Vec<usize>),
}

/// Inputs `[n × in_dim]` with regression or class targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        let n = match &targets {
            Targets::Real(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        };
        if n != inputs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {n} targets",
                inputs.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let targets = match &self.targets {
            Targets::Real(t) => Targets::Real(t.select_rows(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        };
        Dataset {
            inputs: self.inputs.select_rows(idx),
            targets,
        }
    }

    pub(crate) fn real_targets(&self) -> &Matrix {
        match &self.targets {
            Targets::Real(t) => t,
            Targets::Classes(_) => unreachable!("checked by ModelSpec::check"),
        }
    }

    pub(crate) fn class_targets(&self) -> &[usize] {
        match &self.targets {
            Targets::Classes(c) => c,
            Targets::Real(_) => unreachable!("checked by ModelSpec::check"),
        }
    }
}

/// Family-specific knobs for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// Sample count (ignored by modular addition, which always enumerates all `p²` pairs).
    pub samples: usize,
    /// Training share of the modular-addition pairs.
    pub train_fraction: f64,
    /// Polynomial inputs are drawn from `[-half_width, half_width]`.
    pub half_width: f64,
    /// TMS: probability that a feature is zero.
    pub sparsity: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            samples: 500,
            train_fraction: 0.4,
            half_width: 1.0,
            sparsity: 0.95,
        }
    }
}

impl TaskParams {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Tms => TaskParams {
                samples: 1024,
                ..Default::default()
            },
            _ => TaskParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig("train_fraction must be in (0, 1)".into()));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidConfig("half_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidConfig("sparsity must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    /// Parameters that realize the data exactly, for teacher-generated families.
    pub teacher: Option<ParamVector>,
}
