use super::nn::{dense_backward, dense_forward, relu_backward, relu_in_place};
use super::{Dataset, GeneratedData, TaskParams, Targets};
use crate::error::Result;
use crate::math::{gemm, Matrix, Op, RngStream};

pub(super) fn loss_grad(
    d: usize,
    h: usize,
    r: usize,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let (w1, rest) = params.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, rest) = rest.split_at(r * h);
    let (b2, rest) = rest.split_at(r);
    let (w3, rest) = rest.split_at(h * r);
    let (b3, rest) = rest.split_at(h);
    let (w4, b4) = rest.split_at(d * h);

    let x = data.inputs.as_slice();
    let z1 = dense_forward(x, n, d, w1, b1);
    let mut a1 = z1.clone();
    relu_in_place(&mut a1);
    let code = dense_forward(&a1, n, h, w2, b2);
    let z3 = dense_forward(&code, n, r, w3, b3);
    let mut a3 = z3.clone();
    relu_in_place(&mut a3);
    let mut res = dense_forward(&a3, n, h, w4, b4);

    let mut loss = 0.0;
    for (o, t) in res.iter_mut().zip(data.real_targets().as_slice()) {
        *o -= t;
        loss += *o * *o;
    }
    let loss = loss / n as f64;

    let Some(grad) = grad else {
        return loss;
    };
    for v in &mut res {
        *v *= 2.0 / n as f64;
    }
    let (g1, rest) = grad.split_at_mut(h * d);
    let (gb1, rest) = rest.split_at_mut(h);
    let (g2, rest) = rest.split_at_mut(r * h);
    let (gb2, rest) = rest.split_at_mut(r);
    let (g3, rest) = rest.split_at_mut(h * r);
    let (gb3, rest) = rest.split_at_mut(h);
    let (g4, gb4) = rest.split_at_mut(d * h);

    let mut da3 = dense_backward(&a3, n, h, w4, &res, g4, gb4, true).expect("requested");
    relu_backward(&z3, &mut da3);
    let dcode = dense_backward(&code, n, r, w3, &da3, g3, gb3, true).expect("requested");
    let mut da1 = dense_backward(&a1, n, h, w2, &dcode, g2, gb2, true).expect("requested");
    relu_backward(&z1, &mut da1);
    dense_backward(x, n, d, w1, &da1, g1, gb1, false);
    loss
}

/// `x = A·z` with `z ~ N(0, I_r)` and `A ∈ R^{d×r}` of entry standard deviation `1/√r`.
pub(super) fn generate(d: usize, r: usize, task: &TaskParams, rng: &mut RngStream) -> Result<GeneratedData> {
    let n = task.samples;
    let mut a = vec![0.0; d * r];
    rng.fill_normal(&mut a, 1.0 / (r as f64).sqrt());
    let mut z = vec![0.0; n * r];
    rng.fill_normal(&mut z, 1.0);
    let mut x = vec![0.0; n * d];
    gemm(n, r, d, 1.0, &z, Op::N, &a, Op::T, 0.0, &mut x);
    let inputs = Matrix::from_vec(n, d, x)?;
    Ok(GeneratedData {
        train: Dataset::new(inputs.clone(), Targets::Real(inputs))?,
        val: None,
        teacher: None,
    })
}
