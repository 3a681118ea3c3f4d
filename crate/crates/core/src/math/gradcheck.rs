use crate::error::{Error, Result};

/// Largest per-coordinate relative disagreement between an analytic gradient and
/// central differences: `|g - fd| / (|g| + |fd| + 1e-12)`.
pub fn gradient_check<L, G>(loss_fn: L, grad_fn: G, point: &[f64], step: f64) -> Result<f64>
where
    L: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step}")));
    }
    let analytic = grad_fn(point)?;
    if analytic.len() != point.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss_fn(&probe)?;
        probe[i] = orig - step;
        let down = loss_fn(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite(format!("gradient check at coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * step);
        let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
