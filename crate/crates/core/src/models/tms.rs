use super::{Dataset, GeneratedData, TaskParams, Targets};
use crate::error::Result;
use crate::math::{gemm, Matrix, Op, RngStream};

pub(super) fn importances(features: usize, decay: f64) -> Vec<f64> {
    (0..features).map(|i| decay.powi(i as i32)).collect()
}

pub(super) fn loss_grad(
    features: usize,
    hidden: usize,
    decay: f64,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let (w, b) = params.split_at(hidden * features);
    let x = data.inputs.as_slice();
    let imp = importances(features, decay);

    // h = x·Wᵀ, z = h·W + b, x̂ = relu(z)
    let mut h = vec![0.0; n * hidden];
    gemm(n, features, hidden, 1.0, x, Op::N, w, Op::T, 0.0, &mut h);
    let mut z = Vec::with_capacity(n * features);
    for _ in 0..n {
        z.extend_from_slice(b);
    }
    gemm(n, hidden, features, 1.0, &h, Op::N, w, Op::N, 1.0, &mut z);

    let target = data.real_targets().as_slice();
    let mut loss = 0.0;
    let mut dz = vec![0.0; n * features];
    for ((zr, tr), dr) in z
        .chunks_exact(features)
        .zip(target.chunks_exact(features))
        .zip(dz.chunks_exact_mut(features))
    {
        for i in 0..features {
            let out = zr[i].max(0.0);
            let diff = out - tr[i];
            loss += imp[i] * diff * diff;
            if zr[i] > 0.0 {
                dr[i] = 2.0 * imp[i] * diff / n as f64;
            }
        }
    }
    let loss = loss / n as f64;

    let Some(grad) = grad else {
        return loss;
    };
    let (gw, gb) = grad.split_at_mut(hidden * features);
    for row in dz.chunks_exact(features) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    // W enters twice: as the decoder (z = h·W) and the encoder (h = x·Wᵀ)
    gemm(hidden, n, features, 1.0, &h, Op::T, &dz, Op::N, 1.0, gw);
    let mut dh = vec![0.0; n * hidden];
    gemm(n, features, hidden, 1.0, &dz, Op::N, w, Op::T, 0.0, &mut dh);
    gemm(hidden, n, features, 1.0, &dh, Op::T, x, Op::N, 1.0, gw);
    loss
}

/// Each feature is independently nonzero with probability `1 - sparsity`, uniform on `[0, 1)`.
pub(super) fn generate(features: usize, task: &TaskParams, rng: &mut RngStream) -> Result<GeneratedData> {
    let n = task.samples;
    let mut x = vec![0.0; n * features];
    for v in &mut x {
        if rng.bernoulli(1.0 - task.sparsity) {
            *v = rng.uniform(0.0, 1.0);
        }
    }
    let inputs = Matrix::from_vec(n, features, x)?;
    Ok(GeneratedData {
        train: Dataset::new(inputs.clone(), Targets::Real(inputs))?,
        val: None,
        teacher: None,
    })
}
