//! Per-example forward and backward passes for the pretext and downstream
//! objectives. Gradients are accumulated with a caller-supplied weight so a
//! mini-batch mean is a sum of weighted examples.

use rand_chacha::ChaCha8Rng;

use super::losses::{bce_with_logit, mrse_term_grad};
use crate::cascade_data::LabelKind;
use crate::error::Result;
use crate::tcn_model::encoder::{self, EncoderPlan, EncoderTrace, Mode};
use crate::tcn_model::heads::{link, mlp_backward, mlp_forward};
use crate::tcn_model::{sigmoid, Gradients, ModelParams};

fn mode<'a>(rng: &'a mut Option<&mut ChaCha8Rng>) -> Mode<'a> {
    match rng {
        Some(r) => Mode::Train(r),
        None => Mode::Eval,
    }
}

fn backward_from_output(
    params: &ModelParams,
    plan: &EncoderPlan,
    trace: &EncoderTrace,
    g_o: &[f64],
    grads: &mut Gradients,
) {
    let mut g_top = vec![0.0; trace.top().len()];
    let start = g_top.len() - g_o.len();
    g_top[start..].copy_from_slice(g_o);
    encoder::backward(params, plan, trace, &g_top, grads);
}

/// Squared elapse error for one pair. Returns `(prediction, loss)`.
#[allow(clippy::too_many_arguments)]
pub fn pretext_example(
    params: &ModelParams,
    plan: &EncoderPlan,
    slice_a: &[f64],
    slice_b: &[f64],
    elapse: f64,
    weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut Gradients>,
) -> Result<(f64, f64)> {
    let ta = encoder::forward(params, plan, slice_a, mode(&mut rng))?;
    let tb = encoder::forward(params, plan, slice_b, mode(&mut rng))?;
    let input: Vec<f64> = ta.output().iter().chain(tb.output()).copied().collect();
    let idx = params.layout().pretext;
    let head = mlp_forward(params, idx, &input);
    let pred = head.output;
    let loss = (elapse - pred).powi(2);
    if let Some(grads) = grads {
        let g_in = mlp_backward(params, idx, &head, weight * 2.0 * (pred - elapse), grads);
        let c = ta.output().len();
        backward_from_output(params, plan, &ta, &g_in[..c], grads);
        backward_from_output(params, plan, &tb, &g_in[c..], grads);
    }
    Ok((pred, loss))
}

/// Head-only pass on a fixed representation `o`. Returns
/// `(prediction, loss, d loss / d o)` where the loss is the per-example
/// MRSE term or BCE.
pub fn head_example(
    params: &ModelParams,
    o: &[f64],
    observed_n: f64,
    label: f64,
    kind: LabelKind,
    weight: f64,
    grads: Option<&mut Gradients>,
) -> (f64, f64, Vec<f64>) {
    let idx = params.layout().downstream;
    let head = mlp_forward(params, idx, o);
    let raw = head.output;
    let pred = link(raw, observed_n, kind);
    let (loss, g_raw) = match kind {
        LabelKind::Regression => {
            let loss = (label - pred).powi(2) / (label * label);
            // d softplus(r) / dr = σ(r)
            (loss, mrse_term_grad(label, pred) * sigmoid(raw))
        }
        LabelKind::Classification => bce_with_logit(label, raw),
    };
    let g_o = match grads {
        Some(grads) => mlp_backward(params, idx, &head, weight * g_raw, grads),
        None => Vec::new(),
    };
    (pred, loss, g_o)
}

/// Full downstream pass. The encoder receives gradients only when
/// `train_encoder` is set.
#[allow(clippy::too_many_arguments)]
pub fn downstream_example(
    params: &ModelParams,
    plan: &EncoderPlan,
    x: &[f64],
    observed_n: f64,
    label: f64,
    kind: LabelKind,
    weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut Gradients>,
    train_encoder: bool,
) -> Result<(f64, f64)> {
    let trace = encoder::forward(params, plan, x, mode(&mut rng))?;
    match grads {
        Some(grads) => {
            let (pred, loss, g_o) =
                head_example(params, trace.output(), observed_n, label, kind, weight, Some(&mut *grads));
            if train_encoder {
                backward_from_output(params, plan, &trace, &g_o, grads);
            }
            Ok((pred, loss))
        }
        None => {
            let (pred, loss, _) = head_example(params, trace.output(), observed_n, label, kind, weight, None);
            Ok((pred, loss))
        }
    }
}

#[cfg(test)]
mod tests {
    //! Central finite differences against the hand-written backward passes.

    use super::*;
    use crate::tcn_model::ModelConfig;
    use rand::{Rng, SeedableRng};

    fn cfg() -> ModelConfig {
        ModelConfig {
            kernel_k: 3,
            layers_l: 2,
            hidden_channels: 3,
            mlp_hidden: 5,
            seed: 4,
            ..ModelConfig::default()
        }
    }

    fn inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.5)).collect()
    }

    fn perturbed(params: &ModelParams) -> ModelParams {
        // non-zero biases so every code path is exercised
        let mut p = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in p.tensors_mut() {
            if t.name.ends_with("bias") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
            }
        }
        p
    }

    fn check(params: &ModelParams, loss: impl Fn(&ModelParams) -> f64, analytic: &Gradients, tensors: &[usize]) {
        let h = 1e-5;
        for &i in tensors {
            for j in 0..params.data(i).len() {
                let mut plus = params.clone();
                plus.tensors_mut()[i].data[j] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[i].data[j] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.tensors[i][j];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-4, "{}[{j}]: analytic {a}, fd {fd}", params.tensors()[i].name);
            }
        }
    }

    #[test]
    fn pretext_gradients_match_finite_differences() {
        let p = perturbed(&ModelParams::init(&cfg()).unwrap());
        let plan = EncoderPlan::last_step(&cfg(), 24).unwrap();
        let (xa, xb) = (inputs(24, 1), inputs(24, 2));
        let mut g = Gradients::zeros_like(&p);
        pretext_example(&p, &plan, &xa, &xb, 3.0, 1.0, None, Some(&mut g)).unwrap();
        let loss = |q: &ModelParams| pretext_example(q, &plan, &xa, &xb, 3.0, 1.0, None, None).unwrap().1;
        let idx: Vec<usize> = p.encoder_indices().chain(p.layout().pretext.tensors()).collect();
        check(&p, loss, &g, &idx);
        // the downstream head is untouched by the pretext loss
        for i in p.layout().downstream.tensors() {
            assert!(g.tensors[i].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn regression_gradients_match_finite_differences() {
        let p = perturbed(&ModelParams::init(&cfg()).unwrap());
        let plan = EncoderPlan::last_step(&cfg(), 30).unwrap();
        let x = inputs(30, 3);
        let mut g = Gradients::zeros_like(&p);
        let run = |q: &ModelParams, g: Option<&mut Gradients>| {
            downstream_example(q, &plan, &x, 12.0, 40.0, LabelKind::Regression, 1.0, None, g, true)
                .unwrap()
                .1
        };
        run(&p, Some(&mut g));
        let idx: Vec<usize> = p.encoder_indices().chain(p.layout().downstream.tensors()).collect();
        check(&p, |q| run(q, None), &g, &idx);
    }

    #[test]
    fn classification_gradients_match_finite_differences() {
        let p = perturbed(&ModelParams::init(&cfg()).unwrap());
        let plan = EncoderPlan::last_step(&cfg(), 17).unwrap();
        let x = inputs(17, 5);
        let mut g = Gradients::zeros_like(&p);
        let run = |q: &ModelParams, g: Option<&mut Gradients>| {
            downstream_example(q, &plan, &x, 12.0, 1.0, LabelKind::Classification, 1.0, None, g, true)
                .unwrap()
                .1
        };
        run(&p, Some(&mut g));
        let idx: Vec<usize> = p.encoder_indices().chain(p.layout().downstream.tensors()).collect();
        check(&p, |q| run(q, None), &g, &idx);
    }

    #[test]
    fn frozen_encoder_keeps_head_gradients() {
        let p = perturbed(&ModelParams::init(&cfg()).unwrap());
        let plan = EncoderPlan::last_step(&cfg(), 30).unwrap();
        let x = inputs(30, 8);
        let mut full = Gradients::zeros_like(&p);
        let mut frozen = Gradients::zeros_like(&p);
        for (g, train) in [(&mut full, true), (&mut frozen, false)] {
            downstream_example(&p, &plan, &x, 12.0, 40.0, LabelKind::Regression, 1.0, None, Some(g), train)
                .unwrap();
        }
        for i in p.encoder_indices() {
            assert!(frozen.tensors[i].iter().all(|&v| v == 0.0));
            assert!(full.tensors[i].iter().any(|&v| v != 0.0));
        }
        for i in p.layout().downstream.tensors() {
            assert_eq!(frozen.tensors[i], full.tensors[i]);
        }
    }

    #[test]
    fn mrse_gradient_through_softplus() {
        let p = perturbed(&ModelParams::init(&cfg()).unwrap());
        let o = [0.4, -0.2, 1.1];
        let mut g = Gradients::zeros_like(&p);
        let (_, _, g_o) = head_example(&p, &o, 5.0, 9.0, LabelKind::Regression, 1.0, Some(&mut g));
        let h = 1e-5;
        for i in 0..o.len() {
            let mut plus = o;
            plus[i] += h;
            let mut minus = o;
            minus[i] -= h;
            let f = |v: &[f64]| head_example(&p, v, 5.0, 9.0, LabelKind::Regression, 1.0, None).1;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((g_o[i] - fd).abs() / fd.abs().max(1e-6) <= 1e-4);
        }
    }
}
