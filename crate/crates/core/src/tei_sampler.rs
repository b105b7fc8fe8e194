//! Temporal context sampling for the elapse-inference pretext task.
//!
//! A pair is built by drawing the elapse `l_e` uniformly from
//! `{1, ..., min(s, l_max)}` (redrawing values that leave no room for an
//! anchor), then the anchor slice `A` from `{1, ..., s - l_e}` with
//! probability proportional to a decreasing weight `f(A)`. The second slice
//! is `B = A + l_e`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade_data::Cascade;
use crate::dynamics::{slice_log1p, DynamicsConfig};
use crate::error::{Error, Result};
use crate::seeds;

/// Anchor weight function `f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayFn {
    /// `f(A) = 1 / A`
    #[default]
    Reciprocal,
    /// `f(A) = exp(-A / 2)`
    Exponential,
    /// `f(A) = 1`
    Constant,
}

impl DecayFn {
    pub fn weight(self, anchor: usize) -> f64 {
        match self {
            DecayFn::Reciprocal => 1.0 / anchor as f64,
            DecayFn::Exponential => (-(anchor as f64) / 2.0).exp(),
            DecayFn::Constant => 1.0,
        }
    }
}

impl FromStr for DecayFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reciprocal" => Ok(DecayFn::Reciprocal),
            "exponential" => Ok(DecayFn::Exponential),
            "constant" => Ok(DecayFn::Constant),
            other => Err(Error::Config(format!("unknown decay function {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeiConfig {
    pub l_max: usize,
    /// Pre-training observation window in seconds.
    pub pretrain_t: u64,
    pub decay_f: DecayFn,
    pub pairs_per_cascade: usize,
    /// Cascades with fewer events inside the window are skipped.
    pub min_events: usize,
    pub seed: u64,
}

impl Default for TeiConfig {
    fn default() -> Self {
        Self {
            l_max: 12,
            pretrain_t: 43_200,
            decay_f: DecayFn::Reciprocal,
            pairs_per_cascade: 4,
            min_events: 1,
            seed: 0,
        }
    }
}

impl TeiConfig {
    pub fn validate(&self, dynamics: &DynamicsConfig) -> Result<()> {
        dynamics.validate()?;
        if self.l_max < 1 {
            return Err(Error::Config("l_max must be >= 1".into()));
        }
        if self.pretrain_t < 2 * dynamics.slice_seconds {
            return Err(Error::Config(format!(
                "pretrain_t {}s holds fewer than two {}s slices",
                self.pretrain_t, dynamics.slice_seconds
            )));
        }
        if self.pairs_per_cascade < 1 {
            return Err(Error::Config("pairs_per_cascade must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of whole slices in the pre-training window.
    pub fn slice_count(&self, dynamics: &DynamicsConfig) -> usize {
        (self.pretrain_t / dynamics.slice_seconds) as usize
    }
}

/// One pretext example: slices `a < b` (1-based) of one cascade and their
/// elapse `b - a`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeiPair {
    /// Position of the cascade in the corpus the pair was drawn from.
    pub cascade_index: usize,
    pub cascade_id: String,
    pub a: usize,
    pub b: usize,
    pub elapse: usize,
}

impl TeiPair {
    /// Log-scaled values of both slices.
    pub fn slices(&self, cascade: &Cascade, cfg: &DynamicsConfig) -> (Vec<f64>, Vec<f64>) {
        (
            slice_log1p(cascade.events(), self.a, cfg),
            slice_log1p(cascade.events(), self.b, cfg),
        )
    }
}

/// Draws `l_e` uniformly on `{1, ..., min(s, l_max)}`, rejecting draws above
/// `s - 1`.
pub fn sample_elapse(s: usize, l_max: usize, rng: &mut impl Rng) -> Result<usize> {
    if s < 2 {
        return Err(Error::InvalidInput(format!("{s} slices leave no elapse to sample")));
    }
    if l_max < 1 {
        return Err(Error::Config("l_max must be >= 1".into()));
    }
    let top = s.min(l_max);
    loop {
        let l = rng.random_range(1..=top);
        if l < s {
            return Ok(l);
        }
    }
}

/// Draws `A` from `{1, ..., s - l_e}` with probability `f(A) / Σ f`.
pub fn sample_anchor(s: usize, elapse: usize, decay: DecayFn, rng: &mut impl Rng) -> usize {
    assert!(elapse >= 1 && elapse < s, "elapse {elapse} invalid for {s} slices");
    let support = s - elapse;
    if support == 1 {
        return 1;
    }
    let total: f64 = (1..=support).map(|a| decay.weight(a)).sum();
    let mut u = rng.random::<f64>() * total;
    for a in 1..=support {
        u -= decay.weight(a);
        if u < 0.0 {
            return a;
        }
    }
    support
}

/// Exact law of the elapse under [`sample_elapse`]: `(l_e, probability)`.
pub fn elapse_law(s: usize, l_max: usize) -> Vec<(usize, f64)> {
    let top = s.saturating_sub(1).min(l_max);
    (1..=top).map(|l| (l, 1.0 / top as f64)).collect()
}

/// Exact joint law of `(A, l_e)` under the TEI sampler.
pub fn joint_law(s: usize, l_max: usize, decay: DecayFn) -> Vec<((usize, usize), f64)> {
    let mut out = Vec::new();
    for (l, pl) in elapse_law(s, l_max) {
        let total: f64 = (1..=s - l).map(|a| decay.weight(a)).sum();
        for a in 1..=s - l {
            out.push(((a, l), pl * decay.weight(a) / total));
        }
    }
    out
}

/// Exact law of the elapse under uniform sampling of ordered pairs:
/// `P(l) = (s - l) / C(s, 2)`.
pub fn uniform_pair_elapse_law(s: usize) -> Vec<(usize, f64)> {
    let pairs = (s * (s - 1) / 2) as f64;
    (1..s).map(|l| (l, (s - l) as f64 / pairs)).collect()
}

pub fn law_variance(law: &[(usize, f64)]) -> f64 {
    let mean: f64 = law.iter().map(|(l, p)| *l as f64 * p).sum();
    law.iter().map(|(l, p)| p * (*l as f64 - mean).powi(2)).sum()
}

/// Uniform draw over all ordered slice pairs `A < B <= s`.
pub fn sample_uniform_pair(s: usize, rng: &mut impl Rng) -> (usize, usize) {
    assert!(s >= 2);
    let mut k = rng.random_range(0..s * (s - 1) / 2);
    for a in 1..s {
        let row = s - a;
        if k < row {
            return (a, a + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index within range")
}

/// How slice pairs are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSampling {
    /// Uniform elapse, decaying anchor weights.
    Tei,
    /// Uniform over all ordered pairs; the ablation control.
    UniformPairs,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretextSet {
    pub pairs: Vec<TeiPair>,
    pub skipped: usize,
}

impl PretextSet {
    /// Audit dump: `cascade_id\tA\tB\tl_e` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cascade_id\ta\tb\telapse\n");
        for p in &self.pairs {
            writeln!(out, "{}\t{}\t{}\t{}", p.cascade_id, p.a, p.b, p.elapse).unwrap();
        }
        out
    }
}

fn build(
    cascades: &[&Cascade],
    dynamics: &DynamicsConfig,
    cfg: &TeiConfig,
    sampling: PairSampling,
    stream: u64,
) -> Result<PretextSet> {
    cfg.validate(dynamics)?;
    let s = cfg.slice_count(dynamics);
    let mut pairs = Vec::with_capacity(cascades.len() * cfg.pairs_per_cascade);
    let mut skipped = 0;
    for (index, c) in cascades.iter().enumerate() {
        if c.count_before(s as u64 * dynamics.slice_seconds) < cfg.min_events {
            skipped += 1;
            continue;
        }
        let mut rng = seeds::rng(
            seeds::derive(cfg.seed, "tei.stream", stream),
            "tei.cascade",
            index as u64,
        );
        for _ in 0..cfg.pairs_per_cascade {
            let (a, b) = match sampling {
                PairSampling::Tei => {
                    let l = sample_elapse(s, cfg.l_max, &mut rng)?;
                    let a = sample_anchor(s, l, cfg.decay_f, &mut rng);
                    (a, a + l)
                }
                PairSampling::UniformPairs => sample_uniform_pair(s, &mut rng),
            };
            pairs.push(TeiPair {
                cascade_index: index,
                cascade_id: c.id.clone(),
                a,
                b,
                elapse: b - a,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoEligibleCascades { skipped });
    }
    Ok(PretextSet { pairs, skipped })
}

/// Draws `pairs_per_cascade` pairs per eligible cascade. `stream` separates
/// independent redraws of the same corpus (epochs, validation).
pub fn build_pretext_set(
    cascades: &[&Cascade],
    dynamics: &DynamicsConfig,
    cfg: &TeiConfig,
    stream: u64,
) -> Result<PretextSet> {
    build(cascades, dynamics, cfg, PairSampling::Tei, stream)
}

/// As [`build_pretext_set`], with pairs drawn uniformly over all ordered
/// valid pairs and no `l_max` cap.
pub fn random_sampling_ablation(
    cascades: &[&Cascade],
    dynamics: &DynamicsConfig,
    cfg: &TeiConfig,
    stream: u64,
) -> Result<PretextSet> {
    build(cascades, dynamics, cfg, PairSampling::UniformPairs, stream)
}

pub fn build_with(
    sampling: PairSampling,
    cascades: &[&Cascade],
    dynamics: &DynamicsConfig,
    cfg: &TeiConfig,
    stream: u64,
) -> Result<PretextSet> {
    build(cascades, dynamics, cfg, sampling, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn elapse_rejection_support() {
        let mut r = rng();
        let mut seen = [0usize; 13];
        for _ in 0..20_000 {
            seen[sample_elapse(4, 12, &mut r).unwrap()] += 1;
        }
        assert!(seen[1] > 0 && seen[2] > 0 && seen[3] > 0);
        assert!(seen[4..].iter().all(|&c| c == 0));
        // uniform over the three admissible values
        for &c in &seen[1..4] {
            assert!((c as f64 / 20_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
        assert!((0..100).all(|_| sample_elapse(2, 12, &mut r).unwrap() == 1));
        assert!(sample_elapse(1, 12, &mut r).is_err());
    }

    #[test]
    fn anchor_edge_cases() {
        let mut r = rng();
        assert!((0..50).all(|_| sample_anchor(5, 4, DecayFn::Reciprocal, &mut r) == 1));
        let law = joint_law(4, 12, DecayFn::Reciprocal);
        let p = |a, l| law.iter().find(|(k, _)| *k == (a, l)).unwrap().1;
        assert!((p(1, 2) / (p(1, 2) + p(2, 2)) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_weights_strictly_decrease() {
        for f in [DecayFn::Reciprocal, DecayFn::Exponential] {
            assert!((1..30).all(|a| f.weight(a) > f.weight(a + 1)));
        }
    }

    #[test]
    fn uniform_pairs_enumerate_small_case() {
        let mut r = rng();
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..30_000 {
            *counts.entry(sample_uniform_pair(3, &mut r)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![(1, 2), (1, 3), (2, 3)]);
        for c in counts.values() {
            assert!((*c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
        assert!((0..20).all(|_| sample_uniform_pair(2, &mut r) == (1, 2)));
    }

    #[test]
    fn laws_are_normalised() {
        for s in 2..30 {
            for l_max in [1, 6, 12, 24] {
                let total: f64 = joint_law(s, l_max, DecayFn::Reciprocal).iter().map(|x| x.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
            let total: f64 = uniform_pair_elapse_law(s).iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!((law_variance(&elapse_law(24, 12)) - 143.0 / 12.0).abs() < 1e-12);
    }

    fn corpus(n: usize) -> Vec<Cascade> {
        (0..n)
            .map(|i| Cascade::new(format!("c{i}"), i as i64, (0..50).map(|k| k * 100).collect()).unwrap())
            .collect()
    }

    #[test]
    fn pretext_set_counts_determinism_and_invariants() {
        let cs = corpus(1);
        let refs: Vec<&Cascade> = cs.iter().collect();
        let dyncfg = DynamicsConfig::default();
        let cfg = TeiConfig {
            pairs_per_cascade: 3,
            ..TeiConfig::default()
        };
        let set = build_pretext_set(&refs, &dyncfg, &cfg, 0).unwrap();
        assert_eq!(set.pairs.len(), 3);
        assert_eq!(set, build_pretext_set(&refs, &dyncfg, &cfg, 0).unwrap());
        for p in &set.pairs {
            assert!(p.elapse >= 1 && p.elapse <= 12 && p.b <= 24 && p.b == p.a + p.elapse);
        }
        let tsv = set.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
    }

    #[test]
    fn empty_cascades_are_skipped_and_counted() {
        let cs = [Cascade::new("e", 0, vec![]).unwrap()];
        let refs: Vec<&Cascade> = cs.iter().collect();
        let err = build_pretext_set(&refs, &DynamicsConfig::default(), &TeiConfig::default(), 0);
        assert!(matches!(err, Err(Error::NoEligibleCascades { skipped: 1 })));
        let short = TeiConfig {
            pretrain_t: 1800,
            ..TeiConfig::default()
        };
        assert!(matches!(
            build_pretext_set(&refs, &DynamicsConfig::default(), &short, 0),
            Err(Error::Config(_))
        ));
    }
}
