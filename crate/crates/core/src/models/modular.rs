use super::nn::{dense_backward, dense_forward, relu_backward, relu_in_place};
use super::{Dataset, GeneratedData, TaskParams, Targets};
use crate::error::Result;
use crate::math::{Matrix, RngStream};

struct Parts<'a> {
    embed: &'a [f64],
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split(p: usize, e: usize, h: usize, params: &[f64]) -> Parts<'_> {
    let (embed, rest) = params.split_at(p * e);
    let (w1, rest) = rest.split_at(h * 2 * e);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(p * h);
    Parts { embed, w1, b1, w2, b2 }
}

fn tokens(data: &Dataset) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..data.len()).map(|k| {
        let row = data.inputs.row(k);
        (row[0] as usize, row[1] as usize)
    })
}

struct Forward {
    h0: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(p: usize, e: usize, parts: &Parts<'_>, data: &Dataset) -> Forward {
    let n = data.len();
    let mut h0 = Vec::with_capacity(n * 2 * e);
    for (a, b) in tokens(data) {
        h0.extend_from_slice(&parts.embed[a * e..(a + 1) * e]);
        h0.extend_from_slice(&parts.embed[b * e..(b + 1) * e]);
    }
    let z1 = dense_forward(&h0, n, 2 * e, parts.w1, parts.b1);
    let mut h1 = z1.clone();
    relu_in_place(&mut h1);
    let logits = dense_forward(&h1, n, parts.b1.len(), parts.w2, parts.b2);
    debug_assert_eq!(logits.len(), n * p);
    Forward { h0, z1, h1, logits }
}

pub(super) fn loss_grad(
    p: usize,
    e: usize,
    h: usize,
    params: &[f64],
    data: &Dataset,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.len();
    let parts = split(p, e, h, params);
    let fwd = forward(p, e, &parts, data);
    let labels = data.class_targets();

    // softmax cross-entropy; dlogits = (softmax - onehot) / n
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * p];
    for (k, row) in fwd.logits.chunks_exact(p).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[labels[k]];
        let d = &mut dlogits[k * p..(k + 1) * p];
        for (dj, &v) in d.iter_mut().zip(row) {
            *dj = (v - lse).exp() / n as f64;
        }
        d[labels[k]] -= 1.0 / n as f64;
    }
    let loss = loss / n as f64;

    let Some(grad) = grad else {
        return loss;
    };
    let (g_embed, rest) = grad.split_at_mut(p * e);
    let (g_w1, rest) = rest.split_at_mut(h * 2 * e);
    let (g_b1, rest) = rest.split_at_mut(h);
    let (g_w2, g_b2) = rest.split_at_mut(p * h);

    let mut dh1 = dense_backward(&fwd.h1, n, h, parts.w2, &dlogits, g_w2, g_b2, true)
        .expect("requested");
    relu_backward(&fwd.z1, &mut dh1);
    let dh0 = dense_backward(&fwd.h0, n, 2 * e, parts.w1, &dh1, g_w1, g_b1, true)
        .expect("requested");
    for (k, (a, b)) in tokens(data).enumerate() {
        let row = &dh0[k * 2 * e..(k + 1) * 2 * e];
        for (g, d) in g_embed[a * e..(a + 1) * e].iter_mut().zip(&row[..e]) {
            *g += d;
        }
        for (g, d) in g_embed[b * e..(b + 1) * e].iter_mut().zip(&row[e..]) {
            *g += d;
        }
    }
    loss
}

pub(super) fn accuracy(p: usize, e: usize, h: usize, params: &[f64], data: &Dataset) -> f64 {
    let parts = split(p, e, h, params);
    let fwd = forward(p, e, &parts, data);
    let labels = data.class_targets();
    let correct = fwd
        .logits
        .chunks_exact(p)
        .zip(labels)
        .filter(|(row, &y)| {
            // first maximal index wins ties
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    correct as f64 / data.len() as f64
}

/// All `p²` pairs, shuffled, with the first `⌊train_fraction·p²⌋` used for training.
pub(super) fn generate(p: usize, task: &TaskParams, rng: &mut RngStream) -> Result<GeneratedData> {
    let mut pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
    rng.shuffle(&mut pairs);
    let n_train = ((task.train_fraction * pairs.len() as f64) + 1e-9).floor() as usize;
    let build = |subset: &[(usize, usize)]| -> Result<Dataset> {
        let inputs: Vec<f64> = subset.iter().flat_map(|&(a, b)| [a as f64, b as f64]).collect();
        let labels = subset.iter().map(|&(a, b)| (a + b) % p).collect();
        Dataset::new(
            Matrix::from_vec(subset.len(), 2, inputs)?,
            Targets::Classes(labels),
        )
    };
    Ok(GeneratedData {
        train: build(&pairs[..n_train])?,
        val: Some(build(&pairs[n_train..])?),
        teacher: None,
    })
}
