//! Statistical checks of the cascade generator against closed-form laws.

use prep_core::seeds;
use prep_core::synthetic::{generate, quantile, simulate_hawkes, summarize, GenConfig, ProcessParams};

fn stationary(mu: f64, alpha: f64) -> ProcessParams {
    ProcessParams {
        mu,
        alpha,
        tau: 600.0,
        base_decay_tau: None,
    }
}

fn sizes(cfg: &GenConfig) -> Vec<f64> {
    generate(cfg).unwrap().cascades.iter().map(|c| c.size() as f64).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn flat(alpha: f64, n: usize, seed: u64) -> GenConfig {
    GenConfig {
        n_cascades: n,
        horizon: 50_000,
        base_rate_mu: 0.005,
        branching_alpha: alpha,
        attractiveness_sigma: 0.0,
        base_decay_tau: f64::INFINITY,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn immigrant_only_counts_have_poisson_mean() {
    let cfg = flat(0.0, 400, 1);
    let s = sizes(&cfg);
    let lambda = cfg.base_rate_mu * cfg.horizon as f64;
    let se = (lambda / s.len() as f64).sqrt();
    let m = mean(&s);
    assert!((m - lambda).abs() <= 3.0 * se, "mean {m}, expected {lambda} ± {}", 3.0 * se);
    let var = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    assert!((var / lambda - 1.0).abs() < 0.25, "dispersion {}", var / lambda);
}

#[test]
fn branching_mean_matches_cluster_size() {
    let cfg = flat(0.5, 300, 2);
    let expected = cfg.base_rate_mu * cfg.horizon as f64 / (1.0 - cfg.branching_alpha);
    let m = mean(&sizes(&cfg));
    assert!((m / expected - 1.0).abs() < 0.10, "mean {m}, expected {expected}");
}

#[test]
fn immigrant_only_gaps_are_exponential() {
    let p = stationary(0.02, 0.0);
    let mut rng = seeds::rng(3, "ks", 0);
    let (times, cut) = simulate_hawkes(&p, 200_000.0, 100_000, &mut rng);
    assert!(!cut);
    let mut gaps: Vec<f64> = std::iter::once(times[0]).chain(times.windows(2).map(|w| w[1] - w[0])).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len() as f64;
    let d = gaps
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let cdf = 1.0 - (-p.mu * g).exp();
            (cdf - i as f64 / n).abs().max((i as f64 + 1.0) / n - cdf)
        })
        .fold(0.0, f64::max);
    // Kolmogorov critical value at the 1% level
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d} over {n} gaps");
}

#[test]
fn stronger_branching_has_heavier_upper_tail() {
    let mut p99 = Vec::new();
    for alpha in [0.2, 0.8] {
        let mut s = sizes(&GenConfig {
            n_cascades: 600,
            branching_alpha: alpha,
            ..GenConfig::default()
        });
        s.sort_by(f64::total_cmp);
        p99.push(quantile(&s, 0.99));
    }
    assert!(p99[1] > p99[0], "p99 sizes {p99:?}");
}

#[test]
fn generation_is_seeded() {
    let cfg = GenConfig {
        n_cascades: 50,
        ..GenConfig::default()
    };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = generate(&GenConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(generate(&cfg).unwrap().cascades, other.cascades);
    let summary = summarize(&generate(&cfg).unwrap().cascades);
    assert!(summary.size_quantile("p50").is_some());
}
