//! Dense-layer building blocks shared by the MLP-style families. Activations are row-major
//! `[batch × width]`; weights are row-major `[out × in]`.

use crate::math::{gemm, Op};

/// `x·Wᵀ + b`.
pub(crate) fn dense_forward(x: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(n, fan_in, out, 1.0, x, Op::N, w, Op::T, 1.0, &mut y);
    y
}

/// Accumulates weight and bias gradients for `y = x·Wᵀ + b` and, when asked, returns `∂/∂x`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    n: usize,
    fan_in: usize,
    w: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let out = gb.len();
    gemm(out, n, fan_in, 1.0, dy, Op::T, x, Op::N, 1.0, gw);
    for row in dy.chunks_exact(out) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    need_dx.then(|| {
        let mut dx = vec![0.0; n * fan_in];
        gemm(n, out, fan_in, 1.0, dy, Op::N, w, Op::N, 0.0, &mut dx);
        dx
    })
}

pub(crate) fn relu_in_place(z: &mut [f64]) {
    for v in z {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the upstream gradient wherever the pre-activation was not positive.
pub(crate) fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}
