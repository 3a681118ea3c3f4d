use super::{Dataset, GeneratedData, ModelSpec, ParamVector, TaskParams, Targets};
use crate::error::Result;
use crate::math::{Matrix, RngStream};

#[inline]
fn horner(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

pub(super) fn loss_grad(coef: &[f64], data: &Dataset, grad: Option<&mut [f64]>) -> f64 {
    let n = data.len() as f64;
    let xs = data.inputs.as_slice();
    let ys = data.real_targets().as_slice();
    match grad {
        None => {
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| {
                    let r = horner(coef, x) - y;
                    r * r
                })
                .sum::<f64>()
                / n
        }
        Some(g) => {
            let mut loss = 0.0;
            for (&x, &y) in xs.iter().zip(ys) {
                let r = horner(coef, x) - y;
                loss += r * r;
                let scale = 2.0 * r / n;
                let mut pow = 1.0;
                for gi in g.iter_mut() {
                    *gi += scale * pow;
                    pow *= x;
                }
            }
            loss / n
        }
    }
}

/// Targets `y_k = Σ coef_i x_k^i` at the given abscissae.
pub fn polynomial_dataset(coef: &[f64], xs: &[f64]) -> Result<Dataset> {
    let ys: Vec<f64> = xs.iter().map(|&x| horner(coef, x)).collect();
    Dataset::new(
        Matrix::from_vec(xs.len(), 1, xs.to_vec())?,
        Targets::Real(Matrix::from_vec(ys.len(), 1, ys)?),
    )
}

/// Teacher coefficients uniform on `[-1, 1]`, inputs uniform on `[-half_width, half_width]`.
pub(super) fn generate(
    spec: &ModelSpec,
    degree: usize,
    task: &TaskParams,
    rng: &mut RngStream,
) -> Result<GeneratedData> {
    let coef: Vec<f64> = (0..=degree).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let xs: Vec<f64> = (0..task.samples)
        .map(|_| rng.uniform(-task.half_width, task.half_width))
        .collect();
    Ok(GeneratedData {
        train: polynomial_dataset(&coef, &xs)?,
        val: None,
        teacher: Some(ParamVector::new(spec, coef)?),
    })
}
