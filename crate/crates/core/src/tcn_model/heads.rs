//! Two-layer perceptron heads: the elapse regressor on `o_a || o_b` and the
//! downstream head on `o`.

use super::params::{Gradients, MlpIndex, ModelParams};
use crate::cascade_data::LabelKind;

/// Values kept from an MLP forward pass for its backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
    pub output: f64,
}

/// `w2 · relu(W1 x + b1) + b2`
pub fn mlp_forward(params: &ModelParams, idx: MlpIndex, input: &[f64]) -> MlpTrace {
    let w1 = params.data(idx.w1);
    let b1 = params.data(idx.b1);
    let w2 = params.data(idx.w2);
    let b2 = params.data(idx.b2)[0];
    let width = input.len();
    let hidden_pre: Vec<f64> = b1
        .iter()
        .zip(w1.chunks_exact(width))
        .map(|(b, row)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    let output = b2
        + hidden_pre
            .iter()
            .zip(w2)
            .map(|(h, w)| h.max(0.0) * w)
            .sum::<f64>();
    MlpTrace {
        input: input.to_vec(),
        hidden_pre,
        output,
    }
}

/// Accumulates head gradients for `d loss / d output = g_out` and returns
/// the gradient with respect to the head input.
pub fn mlp_backward(
    params: &ModelParams,
    idx: MlpIndex,
    trace: &MlpTrace,
    g_out: f64,
    grads: &mut Gradients,
) -> Vec<f64> {
    let width = trace.input.len();
    let w1 = params.data(idx.w1);
    let w2 = params.data(idx.w2);
    grads.tensors[idx.b2][0] += g_out;
    let mut g_in = vec![0.0; width];
    for (j, &h) in trace.hidden_pre.iter().enumerate() {
        grads.tensors[idx.w2][j] += g_out * h.max(0.0);
        if h <= 0.0 {
            continue;
        }
        let g = g_out * w2[j];
        grads.tensors[idx.b1][j] += g;
        let row = &w1[j * width..(j + 1) * width];
        let grow = &mut grads.tensors[idx.w1][j * width..(j + 1) * width];
        for i in 0..width {
            grow[i] += g * trace.input[i];
            g_in[i] += g * row[i];
        }
    }
    g_in
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predicted elapse `MLP_p(o_a || o_b)`.
pub fn predict_elapse(o_a: &[f64], o_b: &[f64], params: &ModelParams) -> f64 {
    let input: Vec<f64> = o_a.iter().chain(o_b).copied().collect();
    mlp_forward(params, params.layout().pretext, &input).output
}

/// Maps the raw head output `r` to a prediction: `N(T) + softplus(r)` for
/// regression, `sigmoid(r)` for classification.
pub fn link(raw: f64, observed_n: f64, kind: LabelKind) -> f64 {
    match kind {
        LabelKind::Regression => observed_n + softplus(raw),
        LabelKind::Classification => sigmoid(raw),
    }
}

/// Downstream prediction from representation `o`.
pub fn predict_downstream(o: &[f64], observed_n: f64, params: &ModelParams, kind: LabelKind) -> f64 {
    let raw = mlp_forward(params, params.layout().downstream, o).output;
    link(raw, observed_n, kind)
}
