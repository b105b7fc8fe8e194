//! Popularity dynamics: per-time-unit reshare increments and their
//! fixed-length time slices.

use serde::{Deserialize, Serialize};

use crate::cascade_data::Cascade;
use crate::error::{Error, Result};

/// Binning granularity shared by pre-training and downstream tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub unit_seconds: u64,
    pub slice_seconds: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            unit_seconds: 5,
            slice_seconds: 1800,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unit_seconds == 0 {
            return Err(Error::Config("unit_seconds must be >= 1".into()));
        }
        if self.slice_seconds == 0 || !self.slice_seconds.is_multiple_of(self.unit_seconds) {
            return Err(Error::Config(format!(
                "slice length {}s is not a positive multiple of the {}s unit",
                self.slice_seconds, self.unit_seconds
            )));
        }
        Ok(())
    }

    pub fn units_per_slice(&self) -> usize {
        (self.slice_seconds / self.unit_seconds) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Raw,
    Log1p,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopularityDynamics {
    unit_seconds: u64,
    values: Vec<f64>,
    transform: Transform,
}

impl PopularityDynamics {
    pub fn unit_seconds(&self) -> u64 {
        self.unit_seconds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Observation length in seconds.
    pub fn duration(&self) -> u64 {
        self.values.len() as u64 * self.unit_seconds
    }

    /// Maps every value `v` to `ln(1 + v)`. Fails if already applied.
    pub fn apply_log1p(mut self) -> Result<Self> {
        if self.transform != Transform::Raw {
            return Err(Error::InvalidInput("log1p already applied".into()));
        }
        for v in &mut self.values {
            *v = v.ln_1p();
        }
        self.transform = Transform::Log1p;
        Ok(self)
    }

    /// Splits into `s = floor(T / slice_seconds)` slices; the trailing
    /// remainder is discarded.
    pub fn segment(&self, slice_seconds: u64) -> Result<Vec<Slice>> {
        if slice_seconds == 0 || !slice_seconds.is_multiple_of(self.unit_seconds) {
            return Err(Error::Config(format!(
                "slice length {slice_seconds}s is not a multiple of the {}s unit",
                self.unit_seconds
            )));
        }
        let len = (slice_seconds / self.unit_seconds) as usize;
        let s = self.values.len() / len;
        if s == 0 {
            return Err(Error::InvalidInput(format!(
                "observation of {}s is shorter than one {slice_seconds}s slice",
                self.duration()
            )));
        }
        Ok(self
            .values
            .chunks_exact(len)
            .enumerate()
            .map(|(i, chunk)| Slice {
                index: i + 1,
                values: chunk.to_vec(),
            })
            .collect())
    }
}

/// One contiguous slice of the dynamics, numbered from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub index: usize,
    pub values: Vec<f64>,
}

/// Counts events into half-open bins `[(i-1)*unit, i*unit)` over `[0, T)`.
pub fn bin_dynamics(c: &Cascade, observation: u64, unit_seconds: u64) -> Result<PopularityDynamics> {
    if unit_seconds == 0 || !observation.is_multiple_of(unit_seconds) {
        return Err(Error::Config(format!(
            "observation time {observation}s is not a multiple of the {unit_seconds}s unit"
        )));
    }
    let n = (observation / unit_seconds) as usize;
    Ok(PopularityDynamics {
        unit_seconds,
        values: bin_window(c.events(), 0, n, unit_seconds),
        transform: Transform::Raw,
    })
}

/// Raw counts for `len` bins starting at second `start`.
pub fn bin_window(events: &[u64], start: u64, len: usize, unit_seconds: u64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let end = start + len as u64 * unit_seconds;
    let lo = events.partition_point(|&e| e < start);
    for &e in &events[lo..] {
        if e >= end {
            break;
        }
        out[((e - start) / unit_seconds) as usize] += 1.0;
    }
    out
}

/// Log-scaled values of slice `index` (1-based) without materialising the
/// whole observation window.
pub fn slice_log1p(events: &[u64], index: usize, cfg: &DynamicsConfig) -> Vec<f64> {
    debug_assert!(index >= 1);
    let start = (index as u64 - 1) * cfg.slice_seconds;
    let mut v = bin_window(events, start, cfg.units_per_slice(), cfg.unit_seconds);
    for x in &mut v {
        *x = x.ln_1p();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cascade(events: Vec<u64>) -> Cascade {
        Cascade::new("c", 0, events).unwrap()
    }

    #[test]
    fn bins_by_half_open_units() {
        let d = bin_dynamics(&cascade(vec![3, 7, 7, 12]), 20, 5).unwrap();
        assert_eq!(d.values(), &[1.0, 2.0, 1.0, 0.0]);
        assert_eq!(d.transform(), Transform::Raw);
        let boundary = bin_dynamics(&cascade(vec![5, 10, 20]), 20, 5).unwrap();
        assert_eq!(boundary.values(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_and_default_lengths() {
        let d = bin_dynamics(&cascade(vec![]), 3600, 5).unwrap();
        assert_eq!(d.values().len(), 720);
        assert!(d.values().iter().all(|&v| v == 0.0));
        assert!(matches!(bin_dynamics(&cascade(vec![]), 21, 5), Err(Error::Config(_))));
    }

    #[test]
    fn log1p_values_and_double_application() {
        let d = bin_dynamics(&cascade(vec![5]), 15, 5).unwrap().apply_log1p().unwrap();
        assert_eq!(d.values(), &[0.0, 2f64.ln(), 0.0]);
        assert!(d.clone().apply_log1p().is_err());
        let z = bin_dynamics(&cascade(vec![]), 15, 5).unwrap().apply_log1p().unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segment_counts_and_remainder() {
        let d = bin_dynamics(&cascade(vec![]), 7200, 5).unwrap();
        let s = d.segment(1800).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|sl| sl.values.len() == 360));
        assert_eq!(s.iter().map(|sl| sl.index).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

        let d = bin_dynamics(&cascade(vec![]), 2000, 5).unwrap();
        assert_eq!(d.segment(1800).unwrap().len(), 1);
        let short = bin_dynamics(&cascade(vec![]), 1000, 5).unwrap();
        assert!(short.segment(1800).is_err());
    }

    #[test]
    fn slice_log1p_matches_segmented_window() {
        let events: Vec<u64> = (0..400).map(|i| i * 17 % 7000).collect::<Vec<_>>();
        let mut events = events;
        events.sort_unstable();
        let c = cascade(events);
        let cfg = DynamicsConfig::default();
        let whole = bin_dynamics(&c, 7200, 5).unwrap().apply_log1p().unwrap();
        let slices = whole.segment(1800).unwrap();
        for sl in &slices {
            assert_eq!(slice_log1p(c.events(), sl.index, &cfg), sl.values);
        }
    }

    fn sorted_events() -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0u64..500, 0..60).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn conservation(events in sorted_events(), units in 1u64..80) {
            let t = units * 5;
            let c = cascade(events.clone());
            let d = bin_dynamics(&c, t, 5).unwrap();
            let kept: f64 = d.values().iter().sum();
            let dropped = events.iter().filter(|&&e| e >= t).count();
            prop_assert_eq!(kept as usize + dropped, events.len());
            prop_assert_eq!(kept as usize, c.count_before(t));
        }

        #[test]
        fn segmentation_partitions_prefix(events in sorted_events(), units in 1u64..100, per in 1u64..20) {
            let d = bin_dynamics(&cascade(events), units * 5, 5).unwrap();
            if let Ok(slices) = d.segment(per * 5) {
                let joined: Vec<f64> = slices.iter().flat_map(|s| s.values.iter().copied()).collect();
                prop_assert_eq!(&joined[..], &d.values()[..joined.len()]);
                prop_assert_eq!(slices.len(), (units / per) as usize);
            }
        }

        #[test]
        fn shift_equivariance(events in sorted_events(), k in 0u64..10) {
            let t = 600;
            let base = bin_dynamics(&cascade(events.clone()), t, 5).unwrap();
            let shifted: Vec<u64> = events.iter().map(|e| e + 5 * k).collect();
            let moved = bin_dynamics(&cascade(shifted), t, 5).unwrap();
            let k = k as usize;
            let n = base.values().len();
            prop_assert_eq!(&moved.values()[k..], &base.values()[..n - k]);
        }

        #[test]
        fn popularity_is_monotone(events in sorted_events(), a in 0u64..600, b in 0u64..600) {
            let c = cascade(events);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.popularity_at(lo) <= c.popularity_at(hi));
        }

        #[test]
        fn log1p_inverts(events in sorted_events()) {
            let raw = bin_dynamics(&cascade(events), 500, 5).unwrap();
            let scaled = raw.clone().apply_log1p().unwrap();
            for (r, s) in raw.values().iter().zip(scaled.values()) {
                prop_assert!((s.exp_m1() - r).abs() <= 1e-12);
            }
        }
    }
}
