//! Shared fixtures for the benchmarks.

use prep_core::seeds;
use prep_core::synthetic::generate;
use prep_core::{Cascade, GenConfig, ModelConfig, ModelParams};
use rand::Rng;

/// Default-architecture parameters.
pub fn default_params() -> ModelParams {
    ModelParams::init(&ModelConfig::default()).expect("default config is valid")
}

/// Log-scaled counts of length `n`.
pub fn input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed, "bench.input", 0);
    (0..n).map(|_| rng.random_range(0.0f64..20.0).ln_1p()).collect()
}

/// `n` cascades from the default generator.
pub fn corpus(n: usize) -> Vec<Cascade> {
    let cfg = GenConfig {
        n_cascades: n,
        ..GenConfig::default()
    };
    generate(&cfg).expect("default generator config is valid").cascades
}
