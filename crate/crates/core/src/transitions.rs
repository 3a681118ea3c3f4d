//! Grokking detection on accuracy curves, loss-drop transition detection, consecutive
//! free-energy pairing and the Arrhenius rate regression `ln r = a + b·ΔF`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llc::{FreeEnergy, LlcEstimate};
use crate::math::{moving_average, ols_fit, FitResult, Matrix};
use crate::training::{MetricRecord, TrainingTrace};

/// Which loss curve the drop rule runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorVariant {
    /// Moving average over `smoothing_window` steps.
    #[default]
    Smoothing,
    /// The raw per-step loss.
    Raw,
}

impl DetectorVariant {
    pub const BOTH: [DetectorVariant; 2] = [DetectorVariant::Smoothing, DetectorVariant::Raw];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorVariant::Smoothing => "smoothing",
            DetectorVariant::Raw => "raw",
        }
    }
}

impl std::fmt::Display for DetectorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DetectorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smoothing" => Ok(DetectorVariant::Smoothing),
            "raw" => Ok(DetectorVariant::Raw),
            other => Err(Error::InvalidConfig(format!(
                "unknown detector `{other}` (expected smoothing or raw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub smoothing_window: usize,
    pub drop_fraction: f64,
    pub train_acc_threshold: f64,
    pub val_acc_threshold: f64,
    /// Validation accuracy below this counts as "only memorized".
    pub val_low_threshold: f64,
    pub variant: DetectorVariant,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 10,
            drop_fraction: 0.10,
            train_acc_threshold: 0.99,
            val_acc_threshold: 0.99,
            val_low_threshold: 0.50,
            variant: DetectorVariant::Smoothing,
        }
    }
}

impl DetectorConfig {
    pub fn with_variant(variant: DetectorVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("detector: {m}")));
        if self.smoothing_window == 0 {
            return bad("smoothing_window must be positive");
        }
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return bad("drop_fraction must be in (0, 1)");
        }
        for t in [
            self.train_acc_threshold,
            self.val_acc_threshold,
            self.val_low_threshold,
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return bad("accuracy thresholds must be in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Memorization (`i`) and generalization (`j`) checkpoint steps of a grokking run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrokSteps {
    pub i: usize,
    pub j: usize,
}

impl GrokSteps {
    pub fn r(&self) -> usize {
        self.j - self.i
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrokEvent {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    pub pre_llc: LlcEstimate,
    pub post_llc: LlcEstimate,
    /// `post − pre`; either sign is possible.
    pub delta_lambda: f64,
}

impl GrokEvent {
    pub fn new(steps: GrokSteps, pre_llc: LlcEstimate, post_llc: LlcEstimate) -> Self {
        Self {
            i: steps.i,
            j: steps.j,
            r: steps.r(),
            delta_lambda: post_llc.lambda_hat - pre_llc.lambda_hat,
            pre_llc,
            post_llc,
        }
    }
}

/// `i` is the first checkpoint with train accuracy at or above `train_acc_threshold` while
/// validation accuracy is still below `val_low_threshold`; `j` is the first later checkpoint
/// with validation accuracy at or above `val_acc_threshold`.
pub fn detect_grokking(records: &[MetricRecord], cfg: &DetectorConfig) -> Result<Option<GrokSteps>> {
    cfg.validate()?;
    let mut accs = Vec::with_capacity(records.len());
    for r in records {
        match (r.train_acc, r.val_acc) {
            (Some(t), Some(v)) => accs.push((r.step, t, v)),
            _ => return Err(Error::MissingValidationMetrics),
        }
    }
    let Some(pos) = accs
        .iter()
        .position(|&(_, t, v)| t >= cfg.train_acc_threshold && v < cfg.val_low_threshold)
    else {
        return Ok(None);
    };
    let i = accs[pos].0;
    Ok(accs[pos + 1..]
        .iter()
        .find(|&&(step, _, v)| step > i && v >= cfg.val_acc_threshold)
        .map(|&(j, _, _)| GrokSteps { i, j }))
}

/// Detected transitions as inclusive `(start, end)` step pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTransitions {
    pub segments: Vec<(usize, usize)>,
    /// Set when the curve never decreased overall, in which case `segments` is empty.
    pub flat: bool,
    pub variant: DetectorVariant,
}

/// Maximal runs of strictly decreasing values whose cumulative drop reaches
/// `drop_fraction · (first − last)`, as inclusive index pairs.
pub fn drop_segments(series: &[f64], drop_fraction: f64) -> (Vec<(usize, usize)>, bool) {
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return (Vec::new(), true);
    };
    let total = first - last;
    if !(total > 0.0) {
        return (Vec::new(), true);
    }
    let threshold = drop_fraction * total;
    let mut segments = Vec::new();
    let mut t = 0;
    while t + 1 < series.len() {
        if series[t + 1] < series[t] {
            let start = t;
            while t + 1 < series.len() && series[t + 1] < series[t] {
                t += 1;
            }
            if series[start] - series[t] >= threshold {
                segments.push((start, t));
            }
        } else {
            t += 1;
        }
    }
    (segments, false)
}

/// Transition detection on `(step, loss)` pairs sorted by step. In the smoothing variant the
/// averaged value of each window is placed at the window's centre step.
pub fn detect_transitions_in(series: &[(usize, f64)], cfg: &DetectorConfig) -> Result<LossTransitions> {
    cfg.validate()?;
    let losses: Vec<f64> = series.iter().map(|p| p.1).collect();
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss curve".into()));
    }
    let (values, offset) = match cfg.variant {
        DetectorVariant::Smoothing => (
            moving_average(&losses, cfg.smoothing_window)?,
            (cfg.smoothing_window - 1) / 2,
        ),
        DetectorVariant::Raw => {
            if losses.is_empty() {
                return Err(Error::EmptySeries);
            }
            (losses, 0)
        }
    };
    let (idx, flat) = drop_segments(&values, cfg.drop_fraction);
    Ok(LossTransitions {
        segments: idx
            .into_iter()
            .map(|(a, b)| (series[a + offset].0, series[b + offset].0))
            .collect(),
        flat,
        variant: cfg.variant,
    })
}

/// Transition detection on a run's dense per-step training loss.
pub fn detect_loss_transitions(trace: &TrainingTrace, cfg: &DetectorConfig) -> Result<LossTransitions> {
    detect_transitions_in(&trace.loss_series(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    #[serde(rename = "F_i")]
    pub f_i: FreeEnergy,
    #[serde(rename = "F_j")]
    pub f_j: FreeEnergy,
    #[serde(rename = "delta_F")]
    pub delta_f: f64,
}

/// The checkpoint nearest to `step`; ties go to the earlier one.
pub fn nearest_checkpoint<T>(step: usize, checkpoints: &[(usize, T)]) -> Option<&(usize, T)> {
    checkpoints
        .iter()
        .min_by_key(|(s, _)| (s.abs_diff(step), *s))
}

/// Event `k` runs from the end of transition `k` to the end of transition `k+1`, with free
/// energies taken from the checkpoints nearest to those two steps.
pub fn pair_consecutive(
    segments: &[(usize, usize)],
    free_energies: &[(usize, FreeEnergy)],
) -> Result<Vec<TransitionEvent>> {
    if segments.len() < 2 {
        return Err(Error::FewerThanTwoTransitions {
            found: segments.len(),
        });
    }
    if free_energies.is_empty() {
        return Err(Error::Missing("free energies at checkpoints".into()));
    }
    segments
        .windows(2)
        .map(|w| {
            let (i, j) = (w[0].1, w[1].1);
            if j <= i {
                return Err(Error::InvalidConfig(
                    "transitions must be ordered and disjoint".into(),
                ));
            }
            let f_i = nearest_checkpoint(i, free_energies).expect("non-empty").1;
            let f_j = nearest_checkpoint(j, free_energies).expect("non-empty").1;
            let delta_f = f_i.value - f_j.value;
            if !delta_f.is_finite() {
                return Err(Error::NonFinite("free-energy difference".into()));
            }
            Ok(TransitionEvent {
                i,
                j,
                r: j - i,
                f_i,
                f_j,
                delta_f,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusFit {
    pub intercept: f64,
    /// Estimate of the effective inverse temperature.
    pub slope: f64,
    pub r_squared: Option<f64>,
    pub events: usize,
    pub fit: FitResult,
}

/// OLS of `ln r` on `ΔF` over `(ΔF, r)` pairs.
pub fn arrhenius_fit(events: &[(f64, f64)]) -> Result<ArrheniusFit> {
    if events.len() < 3 {
        return Err(Error::TooFewEvents {
            needed: 3,
            found: events.len(),
        });
    }
    let mut rows = Vec::with_capacity(events.len());
    let mut y = Vec::with_capacity(events.len());
    for &(df, r) in events {
        if !(r >= 1.0) {
            return Err(Error::InvalidConfig(format!("rate interval {r} is below 1 step")));
        }
        rows.push(vec![1.0, df]);
        y.push(r.ln());
    }
    let fit = ols_fit(&Matrix::from_rows(&rows)?, &y)?;
    Ok(ArrheniusFit {
        intercept: fit.coefficients[0],
        slope: fit.coefficients[1],
        r_squared: fit.r_squared,
        events: events.len(),
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the data range; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        out[b].count += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(step: usize, train_acc: f64, val_acc: f64) -> MetricRecord {
        MetricRecord {
            step,
            train_loss: 0.0,
            val_loss: Some(0.0),
            train_acc: Some(train_acc),
            val_acc: Some(val_acc),
        }
    }

    fn fe(value: f64) -> FreeEnergy {
        FreeEnergy {
            value,
            n: 10,
            loss_term: value,
            complexity_term: 0.0,
        }
    }

    /// Every maximal strictly-decreasing interval, found by checking all index pairs.
    fn brute_force_segments(s: &[f64], frac: f64) -> Vec<(usize, usize)> {
        let total = s[0] - s[s.len() - 1];
        if total <= 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                let decreasing = (a..b).all(|t| s[t + 1] < s[t]);
                let left_max = a == 0 || s[a] >= s[a - 1];
                let right_max = b + 1 == s.len() || s[b + 1] >= s[b];
                if decreasing && left_max && right_max && s[a] - s[b] >= frac * total {
                    out.push((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn grokking_constructed_curve() {
        let records: Vec<_> = (1..=10)
            .map(|k| {
                let step = k * 500;
                let train = if step >= 1000 { 1.0 } else { 0.3 };
                let val = if step >= 5000 { 1.0 } else { 0.1 };
                rec(step, train, val)
            })
            .collect();
        let g = detect_grokking(&records, &DetectorConfig::default()).unwrap().unwrap();
        assert_eq!((g.i, g.j, g.r()), (1000, 5000, 4000));
    }

    #[test]
    fn simultaneous_generalization_is_not_grokking() {
        let records = vec![rec(10, 0.2, 0.2), rec(20, 1.0, 0.995), rec(30, 1.0, 1.0)];
        assert_eq!(detect_grokking(&records, &DetectorConfig::default()).unwrap(), None);
    }

    #[test]
    fn never_generalizing_is_none() {
        let records = vec![rec(10, 1.0, 0.1), rec(20, 1.0, 0.6)];
        assert_eq!(detect_grokking(&records, &DetectorConfig::default()).unwrap(), None);
    }

    #[test]
    fn grokking_needs_validation() {
        let mut r = rec(1, 1.0, 0.0);
        r.val_acc = None;
        assert!(matches!(
            detect_grokking(&[r], &DetectorConfig::default()),
            Err(Error::MissingValidationMetrics)
        ));
    }

    #[test]
    fn staircase_has_two_transitions() {
        let mut loss = vec![1.0; 50];
        loss.extend(vec![0.6; 50]);
        loss.extend(vec![0.2; 50]);
        let series: Vec<_> = loss.iter().enumerate().map(|(i, &l)| (i + 1, l)).collect();
        for variant in DetectorVariant::BOTH {
            let t = detect_transitions_in(&series, &DetectorConfig::with_variant(variant)).unwrap();
            assert_eq!(t.segments.len(), 2, "{variant}");
            assert!(!t.flat);
            // each segment brackets the planted drop
            assert!(t.segments[0].0 <= 51 && t.segments[0].1 >= 50);
            assert!(t.segments[1].0 <= 101 && t.segments[1].1 >= 100);
        }
    }

    #[test]
    fn constant_curve_is_flat() {
        let series: Vec<_> = (1..=40).map(|s| (s, 0.7)).collect();
        let t = detect_transitions_in(&series, &DetectorConfig::default()).unwrap();
        assert!(t.flat);
        assert!(t.segments.is_empty());
    }

    #[test]
    fn short_curve_rejected() {
        let series: Vec<_> = (1..=5).map(|s| (s, 1.0 / s as f64)).collect();
        assert!(matches!(
            detect_transitions_in(&series, &DetectorConfig::default()),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn pairing_counts_and_errors() {
        let fes = vec![(0, fe(10.0)), (100, fe(8.0)), (200, fe(5.0)), (300, fe(1.0))];
        let segs = [(10, 100), (150, 200), (250, 300)];
        let ev = pair_consecutive(&segs, &fes).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].i, ev[0].j, ev[0].r), (100, 200, 100));
        assert_eq!(ev[0].delta_f, 8.0 - 5.0);
        assert_eq!(ev[1].delta_f, 5.0 - 1.0);
        assert!(matches!(
            pair_consecutive(&segs[..1], &fes),
            Err(Error::FewerThanTwoTransitions { found: 1 })
        ));
    }

    #[test]
    fn pairing_uses_nearest_checkpoint_ties_earlier() {
        let fes = vec![(0, fe(3.0)), (10, fe(2.0)), (20, fe(1.0))];
        let ev = pair_consecutive(&[(0, 5), (6, 16)], &fes).unwrap();
        // 5 is equidistant from 0 and 10; 16 is nearest 20
        assert_eq!(ev[0].f_i.value, 3.0);
        assert_eq!(ev[0].f_j.value, 1.0);
        assert_eq!(ev[0].delta_f, 2.0);
    }

    #[test]
    fn exact_exponential_rates() {
        let events: Vec<_> = [-1.0, -0.5, 0.0, 0.3, 1.2]
            .iter()
            .map(|&df: &f64| (df, (-2.0 * df).exp() * 50.0))
            .collect();
        let fit = arrhenius_fit(&events).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_rates_have_zero_slope() {
        let events = [(0.1, 7.0), (0.5, 7.0), (2.0, 7.0), (-1.0, 7.0)];
        let fit = arrhenius_fit(&events).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(fit.r_squared.is_none_or(|r| r == 0.0));
    }

    #[test]
    fn arrhenius_preconditions() {
        assert!(matches!(
            arrhenius_fit(&[(0.0, 2.0), (1.0, 3.0)]),
            Err(Error::TooFewEvents { needed: 3, found: 2 })
        ));
        assert!(arrhenius_fit(&[(0.0, 2.0), (1.0, 0.5), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[-1.0, 0.0, 0.5, 1.0, 1.0], 4).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[3].count, 3);
        assert_eq!(h[0].lo, -1.0);
        assert_eq!(h[3].hi, 1.0);
        assert!(histogram(&[], 3).is_err());
    }

    #[test]
    fn detector_names_parse() {
        assert_eq!("RAW".parse::<DetectorVariant>().unwrap(), DetectorVariant::Raw);
        assert!("fancy".parse::<DetectorVariant>().is_err());
    }

    proptest! {
        #[test]
        fn segments_match_brute_force(values in prop::collection::vec(0.0f64..10.0, 2..60), frac in 0.01f64..0.9) {
            let (fast, flat) = drop_segments(&values, frac);
            prop_assert_eq!(flat, values[0] - values[values.len() - 1] <= 0.0);
            prop_assert_eq!(fast, brute_force_segments(&values, frac));
        }

        #[test]
        fn segments_disjoint_and_ordered(values in prop::collection::vec(0.0f64..10.0, 12..200)) {
            let series: Vec<_> = values.iter().enumerate().map(|(i, &l)| (i * 3, l)).collect();
            for variant in DetectorVariant::BOTH {
                let t = detect_transitions_in(&series, &DetectorConfig::with_variant(variant)).unwrap();
                for w in t.segments.windows(2) {
                    prop_assert!(w[0].1 < w[1].0);
                }
                for s in &t.segments {
                    prop_assert!(s.0 < s.1);
                }
            }
        }

        #[test]
        fn scaling_loss_keeps_boundaries(values in prop::collection::vec(0.0f64..10.0, 12..120), k in 0i32..6) {
            // powers of two keep every comparison and average exact
            let c = 2f64.powi(k - 3);
            let series: Vec<_> = values.iter().enumerate().map(|(i, &l)| (i, l)).collect();
            let scaled: Vec<_> = series.iter().map(|&(s, l)| (s, c * l)).collect();
            for variant in DetectorVariant::BOTH {
                let cfg = DetectorConfig::with_variant(variant);
                prop_assert_eq!(
                    detect_transitions_in(&series, &cfg).unwrap().segments,
                    detect_transitions_in(&scaled, &cfg).unwrap().segments
                );
            }
        }

        #[test]
        fn arrhenius_slope_ignores_rate_scale(dfs in prop::collection::vec(-5.0f64..5.0, 3..20), rs in prop::collection::vec(1.0f64..1e4, 20), c in 1.0f64..100.0) {
            prop_assume!(dfs.iter().any(|d| (d - dfs[0]).abs() > 1e-3));
            let a: Vec<_> = dfs.iter().zip(&rs).map(|(&d, &r)| (d, r)).collect();
            let b: Vec<_> = a.iter().map(|&(d, r)| (d, r * c)).collect();
            let (fa, fb) = (arrhenius_fit(&a).unwrap(), arrhenius_fit(&b).unwrap());
            prop_assert!((fa.slope - fb.slope).abs() < 1e-8 * (1.0 + fa.slope.abs()));
            prop_assert!((fb.intercept - fa.intercept - c.ln()).abs() < 1e-8 * (1.0 + fa.intercept.abs()));
        }

        #[test]
        fn grokking_steps_ordered(accs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40)) {
            let records: Vec<_> = accs.iter().enumerate().map(|(k, &(t, v))| rec(7 * k, t, v)).collect();
            if let Some(g) = detect_grokking(&records, &DetectorConfig::default()).unwrap() {
                prop_assert!(g.j > g.i);
                prop_assert_eq!(g.i % 7, 0);
                prop_assert_eq!(g.j % 7, 0);
            }
        }
    }
}
