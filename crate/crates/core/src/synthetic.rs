//! Seeded self-exciting cascade generator.
//!
//! Each cascade is a univariate Hawkes process with an exponential kernel,
//!
//! ```text
//! λ(t) = μ_m(t) + α · Σ_{e < t} (1/τ) · exp(-(t - e) / τ)
//! ```
//!
//! simulated by Ogata thinning. The immigrant rate is `μ_m(t) = μ_m` when
//! `base_decay_tau` is infinite, and `μ_m · exp(-t / τ_b,m)` otherwise, where
//! `μ_m = base_rate_mu · LogNormal(0, attractiveness_sigma)` and
//! `τ_b,m = base_decay_tau · LogNormal(0, base_decay_sigma)`. The intensity
//! never increases between events, so its value just after the current time
//! is a valid thinning bound.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use crate::cascade_data::Cascade;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_cascades: usize,
    /// Simulation window in seconds.
    pub horizon: u64,
    /// Immigrant events per second for an attractiveness of 1.
    pub base_rate_mu: f64,
    pub branching_alpha: f64,
    pub kernel_decay_tau: f64,
    pub attractiveness_sigma: f64,
    /// Time constant of the immigrant-rate decay; `inf` keeps it constant.
    pub base_decay_tau: f64,
    pub base_decay_sigma: f64,
    pub max_events: usize,
    /// Spacing of synthetic publication timestamps.
    pub publish_interval: i64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_cascades: 5000,
            horizon: 3 * 24 * 3600,
            base_rate_mu: 0.08,
            branching_alpha: 0.3,
            kernel_decay_tau: 600.0,
            attractiveness_sigma: 1.0,
            base_decay_tau: 9600.0,
            base_decay_sigma: 0.35,
            max_events: 50_000,
            publish_interval: 60,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.branching_alpha) {
            return bad(format!(
                "branching_alpha {} must lie in [0, 1) for a subcritical process",
                self.branching_alpha
            ));
        }
        if !(self.base_rate_mu > 0.0 && self.base_rate_mu.is_finite()) {
            return bad(format!("base_rate_mu {} must be positive", self.base_rate_mu));
        }
        if !(self.kernel_decay_tau > 0.0 && self.kernel_decay_tau.is_finite()) {
            return bad(format!("kernel_decay_tau {} must be positive", self.kernel_decay_tau));
        }
        if self.base_decay_tau.is_nan() || self.base_decay_tau <= 0.0 {
            return bad(format!("base_decay_tau {} must be positive", self.base_decay_tau));
        }
        for (name, v) in [
            ("attractiveness_sigma", self.attractiveness_sigma),
            ("base_decay_sigma", self.base_decay_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.max_events == 0 {
            return bad("max_events must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-cascade process parameters after the attractiveness draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessParams {
    pub mu: f64,
    pub alpha: f64,
    pub tau: f64,
    pub base_decay_tau: Option<f64>,
}

impl ProcessParams {
    fn immigrant_rate(&self, t: f64) -> f64 {
        match self.base_decay_tau {
            Some(tb) => self.mu * (-t / tb).exp(),
            None => self.mu,
        }
    }
}

/// Ogata thinning on `[0, horizon]`. Returns the accepted event times and
/// whether the `max_events` cap cut the run short.
pub fn simulate_hawkes(
    p: &ProcessParams,
    horizon: f64,
    max_events: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, bool) {
    let mut times = Vec::new();
    let mut t = 0.0;
    // Σ exp(-(t - e)/τ) over accepted events, evaluated at `t`.
    let mut excitation = 0.0;
    loop {
        let bound = p.immigrant_rate(t) + p.alpha / p.tau * excitation;
        if bound <= 0.0 {
            return (times, false);
        }
        let wait: f64 = Exp1.sample(rng);
        let next = t + wait / bound;
        if next > horizon {
            return (times, false);
        }
        excitation *= (-(next - t) / p.tau).exp();
        t = next;
        let intensity = p.immigrant_rate(t) + p.alpha / p.tau * excitation;
        let u: f64 = rng.random();
        if u * bound <= intensity {
            if times.len() == max_events {
                return (times, true);
            }
            times.push(t);
            excitation += 1.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub cascades: Vec<Cascade>,
    /// `true` where the cascade hit `max_events`.
    pub truncated: Vec<bool>,
}

fn cascade_rng(cfg: &GenConfig, index: usize) -> ChaCha8Rng {
    seeds::rng(cfg.seed, "synthetic.cascade", index as u64)
}

pub fn draw_process(cfg: &GenConfig, rng: &mut impl Rng) -> ProcessParams {
    let attractiveness = if cfg.attractiveness_sigma > 0.0 {
        LogNormal::new(0.0, cfg.attractiveness_sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        1.0
    };
    let base_decay_tau = cfg.base_decay_tau.is_finite().then_some(cfg.base_decay_tau).map(|tb| {
        if cfg.base_decay_sigma > 0.0 {
            tb * LogNormal::new(0.0, cfg.base_decay_sigma)
                .expect("validated sigma")
                .sample(rng)
        } else {
            tb
        }
    });
    ProcessParams {
        mu: cfg.base_rate_mu * attractiveness,
        alpha: cfg.branching_alpha,
        tau: cfg.kernel_decay_tau,
        base_decay_tau,
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut cascades = Vec::with_capacity(cfg.n_cascades);
    let mut truncated = Vec::with_capacity(cfg.n_cascades);
    let width = cfg.n_cascades.max(1).to_string().len();
    for i in 0..cfg.n_cascades {
        let mut rng = cascade_rng(cfg, i);
        let process = draw_process(cfg, &mut rng);
        let (times, cut) = simulate_hawkes(&process, cfg.horizon as f64, cfg.max_events, &mut rng);
        // Flooring preserves order; the thinning clock never exceeds the horizon.
        let events: Vec<u64> = times.iter().map(|t| t.floor() as u64).collect();
        let id = format!("syn{i:0width$}");
        cascades.push(Cascade::new(id, i as i64 * cfg.publish_interval, events)?);
        truncated.push(cut);
    }
    Ok(Generated {
        cascades,
        truncated,
    })
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Corpus statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub total_events: usize,
    pub mean_size: f64,
    /// `(label, value)` for size quantiles.
    pub size_quantiles: Vec<(String, f64)>,
    pub gap_quantiles: Vec<(String, f64)>,
}

const QUANTILES: [(&str, f64); 6] = [
    ("min", 0.0),
    ("p10", 0.1),
    ("p50", 0.5),
    ("p90", 0.9),
    ("p99", 0.99),
    ("max", 1.0),
];

pub fn summarize(cascades: &[Cascade]) -> Summary {
    let mut sizes: Vec<f64> = cascades.iter().map(|c| c.size() as f64).collect();
    sizes.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = cascades
        .iter()
        .flat_map(|c| c.events().windows(2).map(|w| (w[1] - w[0]) as f64))
        .collect();
    gaps.sort_by(f64::total_cmp);
    let qs = |data: &[f64]| -> Vec<(String, f64)> {
        if data.is_empty() {
            return Vec::new();
        }
        QUANTILES
            .iter()
            .map(|(name, q)| (name.to_string(), quantile(data, *q)))
            .collect()
    };
    let total: usize = cascades.iter().map(Cascade::size).sum();
    Summary {
        count: cascades.len(),
        total_events: total,
        mean_size: if cascades.is_empty() {
            0.0
        } else {
            total as f64 / cascades.len() as f64
        },
        size_quantiles: qs(&sizes),
        gap_quantiles: qs(&gaps),
    }
}

impl Summary {
    pub fn size_quantile(&self, label: &str) -> Option<f64> {
        self.size_quantiles
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
    }

    /// `metric,value` CSV. An empty corpus yields only the header and count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        writeln!(out, "count,{}", self.count).unwrap();
        if self.count == 0 {
            return out;
        }
        writeln!(out, "total_events,{}", self.total_events).unwrap();
        writeln!(out, "size_mean,{}", self.mean_size).unwrap();
        for (label, v) in &self.size_quantiles {
            writeln!(out, "size_{label},{v}").unwrap();
        }
        for (label, v) in &self.gap_quantiles {
            writeln!(out, "gap_{label},{v}").unwrap();
        }
        out
    }
}
