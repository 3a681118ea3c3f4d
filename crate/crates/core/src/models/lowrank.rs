use super::{Dataset, GeneratedData, ModelSpec, ParamVector, TaskParams, Targets};
use crate::error::Result;
use crate::math::{gemm, Matrix, Op, RngStream};

/// Squared-error loss of `W₂W₁x`. Picks whichever contraction order is cheaper: through the
/// rank-`r` bottleneck, or through the explicit `d×d` product `M = W₂W₁`.
pub(super) fn loss_grad(
    d: usize,
    r: usize,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let factored_cost = 5 * n * d * r;
    let product_cost = 2 * n * d * d + 3 * d * d * r;
    if factored_cost <= product_cost {
        loss_grad_factored(d, r, params, data, grad)
    } else {
        loss_grad_product(d, r, params, data, grad)
    }
}

fn residual_loss(out: &mut [f64], y: &[f64], n: usize) -> f64 {
    let mut loss = 0.0;
    for (o, t) in out.iter_mut().zip(y) {
        *o -= t;
        loss += *o * *o;
    }
    loss / n as f64
}

pub(super) fn loss_grad_factored(
    d: usize,
    r: usize,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let (w1, w2) = params.split_at(r * d);
    let x = data.inputs.as_slice();
    let mut hid = vec![0.0; n * r];
    gemm(n, d, r, 1.0, x, Op::N, w1, Op::T, 0.0, &mut hid);
    let mut res = vec![0.0; n * d];
    gemm(n, r, d, 1.0, &hid, Op::N, w2, Op::T, 0.0, &mut res);
    let loss = residual_loss(&mut res, data.real_targets().as_slice(), n);

    if let Some(grad) = grad {
        let (g1, g2) = grad.split_at_mut(r * d);
        let scale = 2.0 / n as f64;
        gemm(d, n, r, scale, &res, Op::T, &hid, Op::N, 0.0, g2);
        let mut dhid = vec![0.0; n * r];
        gemm(n, d, r, scale, &res, Op::N, w2, Op::N, 0.0, &mut dhid);
        gemm(r, n, d, 1.0, &dhid, Op::T, x, Op::N, 0.0, g1);
    }
    loss
}

pub(super) fn loss_grad_product(
    d: usize,
    r: usize,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let (w1, w2) = params.split_at(r * d);
    let x = data.inputs.as_slice();
    let mut m = vec![0.0; d * d];
    gemm(d, r, d, 1.0, w2, Op::N, w1, Op::N, 0.0, &mut m);
    let mut res = vec![0.0; n * d];
    gemm(n, d, d, 1.0, x, Op::N, &m, Op::T, 0.0, &mut res);
    let loss = residual_loss(&mut res, data.real_targets().as_slice(), n);

    if let Some(grad) = grad {
        let (g1, g2) = grad.split_at_mut(r * d);
        let mut gm = vec![0.0; d * d];
        gemm(d, n, d, 2.0 / n as f64, &res, Op::T, x, Op::N, 0.0, &mut gm);
        gemm(d, d, r, 1.0, &gm, Op::N, w1, Op::T, 0.0, g2);
        gemm(r, d, d, 1.0, w2, Op::T, &gm, Op::N, 0.0, g1);
    }
    loss
}

/// Teacher factors with entries of standard deviation `1/√d`; inputs `x ~ N(0, I_d)`,
/// targets `y = B·A·x`. The teacher is returned in model layout `[W₁ = A, W₂ = B]`.
pub(super) fn generate(
    spec: &ModelSpec,
    d: usize,
    r: usize,
    task: &TaskParams,
    rng: &mut RngStream,
) -> Result<GeneratedData> {
    let std = 1.0 / (d as f64).sqrt();
    let mut teacher = vec![0.0; 2 * r * d];
    rng.fill_normal(&mut teacher, std);
    let n = task.samples;
    let mut x = vec![0.0; n * d];
    rng.fill_normal(&mut x, 1.0);
    let (w1, w2) = teacher.split_at(r * d);
    let mut hid = vec![0.0; n * r];
    gemm(n, d, r, 1.0, &x, Op::N, w1, Op::T, 0.0, &mut hid);
    let mut y = vec![0.0; n * d];
    gemm(n, r, d, 1.0, &hid, Op::N, w2, Op::T, 0.0, &mut y);
    let inputs = Matrix::from_vec(n, d, x)?;
    Ok(GeneratedData {
        train: Dataset::new(inputs, Targets::Real(Matrix::from_vec(n, d, y)?))?,
        val: None,
        teacher: Some(ParamVector::new(spec, teacher)?),
    })
}
