use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use prep_bench::{corpus, default_params, input};
use prep_core::dynamics::DynamicsConfig;
use prep_core::synthetic::{generate, GenConfig};
use prep_core::tcn_model::checkpoint;
use prep_core::tcn_model::encoder::{self, dilated_causal_conv, EncoderPlan, Mode};
use prep_core::tei_sampler::{build_pretext_set, TeiConfig};
use prep_core::training::objective::pretext_example;
use prep_core::tcn_model::Gradients;
use prep_core::LabelKind;

fn encoder_benches(c: &mut Criterion) {
    let params = default_params();
    let cfg = params.config().clone();
    // one 30-minute slice of 5-second units
    let n = 360;
    let x = input(n, 1);
    let last = EncoderPlan::last_step(&cfg, n).unwrap();
    let full = EncoderPlan::full(&cfg, n).unwrap();
    c.bench_function("encode_last_step_360", |b| b.iter(|| encoder::encode(&params, &last, black_box(&x)).unwrap()));
    c.bench_function("forward_full_plan_360", |b| {
        b.iter(|| encoder::forward(&params, &full, black_box(&x), Mode::Eval).unwrap())
    });
    let y = input(n, 2);
    let mut grads = Gradients::zeros_like(&params);
    c.bench_function("pretext_forward_backward_360", |b| {
        b.iter(|| {
            grads.clear();
            pretext_example(&params, &last, &x, &y, 4.0, 1.0, None, Some(&mut grads)).unwrap()
        })
    });
    let window = input(720, 3);
    let plan_t2 = EncoderPlan::last_step(&cfg, 720).unwrap();
    c.bench_function("downstream_forward_backward_720", |b| {
        b.iter(|| {
            grads.clear();
            prep_core::training::objective::downstream_example(
                &params,
                &plan_t2,
                &window,
                30.0,
                80.0,
                LabelKind::Regression,
                1.0,
                None,
                Some(&mut grads),
                true,
            )
            .unwrap()
        })
    });
}

fn conv_bench(c: &mut Criterion) {
    let (n, ch, k) = (720, 8, 8);
    let x = input(n * ch, 4);
    let w = input(ch * ch * k, 5);
    let bias = vec![0.1; ch];
    c.bench_function("dilated_causal_conv_720x8", |b| {
        b.iter(|| dilated_causal_conv(black_box(&x), n, ch, &w, &bias, ch, k, 16))
    });
}

fn data_benches(c: &mut Criterion) {
    let cfg = GenConfig {
        n_cascades: 20,
        ..GenConfig::default()
    };
    c.bench_function("generate_20_cascades", |b| b.iter(|| generate(black_box(&cfg)).unwrap()));
    let cascades = corpus(200);
    let refs: Vec<_> = cascades.iter().collect();
    let dynamics = DynamicsConfig::default();
    let tei = TeiConfig::default();
    c.bench_function("tei_pairs_200_cascades", |b| {
        b.iter(|| build_pretext_set(black_box(&refs), &dynamics, &tei, 1).unwrap())
    });
    let params = default_params();
    c.bench_function("checkpoint_roundtrip", |b| {
        b.iter(|| checkpoint::from_bytes(&checkpoint::to_bytes(black_box(&params))).unwrap())
    });
}

criterion_group!(benches, encoder_benches, conv_bench, data_benches);
criterion_main!(benches);
