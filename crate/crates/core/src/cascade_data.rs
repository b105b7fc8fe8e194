//! Cascades, the JSON-Lines ingestion format, chronological splits, label
//! budgets and downstream labels.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bin_dynamics, PopularityDynamics};
use crate::error::{Error, Result};
use crate::seeds;

/// One content item: its id, publication time and the ascending second
/// offsets of every reshare.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cascade {
    pub id: String,
    pub publish_ts: i64,
    events: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CascadeRecord<E> {
    id: String,
    publish_ts: i64,
    events: Vec<E>,
}

impl Cascade {
    /// Builds a cascade, rejecting descending event offsets.
    pub fn new(id: impl Into<String>, publish_ts: i64, events: Vec<u64>) -> Result<Self> {
        let id = id.into();
        if let Some(w) = events.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidCascade {
                id,
                message: format!(
                    "events not ascending at position {} ({} > {})",
                    w + 1,
                    events[w],
                    events[w + 1]
                ),
            });
        }
        Ok(Self {
            id,
            publish_ts,
            events,
        })
    }

    pub fn events(&self) -> &[u64] {
        &self.events
    }

    /// Final popularity: every event in the record.
    pub fn size(&self) -> usize {
        self.events.len()
    }

    /// `N(t)`: number of events with offset `<= t`.
    pub fn popularity_at(&self, t: u64) -> usize {
        self.events.partition_point(|&e| e <= t)
    }

    /// Number of events with offset strictly below `t`.
    pub fn count_before(&self, t: u64) -> usize {
        self.events.partition_point(|&e| e < t)
    }

    pub fn to_json_line(&self) -> String {
        let record = CascadeRecord {
            id: self.id.clone(),
            publish_ts: self.publish_ts,
            events: self.events.clone(),
        };
        serde_json::to_string(&record).expect("cascade records always serialize")
    }

    fn from_json_line(line: &str, line_no: usize) -> Result<Self> {
        let record: CascadeRecord<i64> =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let mut events = Vec::with_capacity(record.events.len());
        for e in record.events {
            if e < 0 {
                return Err(Error::InvalidCascade {
                    id: record.id,
                    message: format!("negative event offset {e}"),
                });
            }
            events.push(e as u64);
        }
        Cascade::new(record.id, record.publish_ts, events)
    }
}

/// Parses cascades from JSON-Lines text. Blank lines are skipped.
pub fn parse_cascades(reader: impl BufRead) -> Result<Vec<Cascade>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let cascade = Cascade::from_json_line(&line, line_no)?;
        if !seen.insert(cascade.id.clone()) {
            return Err(Error::DuplicateId(cascade.id));
        }
        out.push(cascade);
    }
    Ok(out)
}

pub fn ingest_cascades(path: impl AsRef<Path>) -> Result<Vec<Cascade>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_cascades(BufReader::new(file))
}

pub fn write_cascades(path: impl AsRef<Path>, cascades: &[Cascade]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for c in cascades {
        writeln!(w, "{}", c.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Prediction horizon `T_p`: an absolute offset in seconds, or the end of
/// the record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    At(u64),
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Regression,
    Classification,
}

/// One downstream prediction setting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: String,
    pub observation: u64,
    pub horizon: Horizon,
    pub label_kind: LabelKind,
    pub min_observed: usize,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        observation: u64,
        horizon: Horizon,
        label_kind: LabelKind,
        min_observed: usize,
    ) -> Result<Self> {
        if observation == 0 {
            return Err(Error::Config("observation time must be positive".into()));
        }
        if let Horizon::At(tp) = horizon {
            if tp <= observation {
                return Err(Error::Config(format!(
                    "horizon {tp}s must exceed observation time {observation}s"
                )));
            }
        }
        if min_observed < 1 {
            return Err(Error::Config("min_observed must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            observation,
            horizon,
            label_kind,
            min_observed,
        })
    }
}

const HOUR: u64 = 3600;
const DAY: u64 = 24 * HOUR;

/// Which corpus's column of the task table to instantiate. The two differ
/// only in the T1 horizon and the T4 observation window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    #[default]
    Weibo,
    Twitter,
}

/// The four representative downstream tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    T1,
    T2,
    T3,
    T4,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::T1, TaskId::T2, TaskId::T3, TaskId::T4];

    pub fn spec(self, platform: Platform, min_observed: usize) -> Result<TaskSpec> {
        use LabelKind::*;
        let (obs, horizon, kind) = match (self, platform) {
            (TaskId::T1, Platform::Weibo) => (HOUR, Horizon::At(3 * DAY), Regression),
            (TaskId::T1, Platform::Twitter) => (HOUR, Horizon::At(DAY), Regression),
            (TaskId::T2, _) => (HOUR, Horizon::Final, Regression),
            (TaskId::T3, _) => (2 * HOUR, Horizon::Final, Regression),
            (TaskId::T4, Platform::Weibo) => (2 * HOUR, Horizon::Final, Classification),
            (TaskId::T4, Platform::Twitter) => (HOUR / 2, Horizon::Final, Classification),
        };
        TaskSpec::new(self.to_string(), obs, horizon, kind, min_observed)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::T1 => "T1",
            TaskId::T2 => "T2",
            TaskId::T3 => "T3",
            TaskId::T4 => "T4",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(TaskId::T1),
            "T2" => Ok(TaskId::T2),
            "T3" => Ok(TaskId::T3),
            "T4" => Ok(TaskId::T4),
            other => Err(Error::Config(format!("unknown task id {other:?}"))),
        }
    }
}

/// A cascade observed over `[0, T)` together with its downstream label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub cascade_id: String,
    pub dynamics: PopularityDynamics,
    pub observed_n: usize,
    /// Regression: `N(T_p)`. Classification: 0.0 or 1.0.
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelOutcome {
    Labeled(LabeledExample),
    Filtered,
}

impl LabelOutcome {
    pub fn into_example(self) -> Option<LabeledExample> {
        match self {
            LabelOutcome::Labeled(e) => Some(e),
            LabelOutcome::Filtered => None,
        }
    }
}

/// Computes the label of `c` under `spec`. Cascades with fewer than
/// `min_observed` events by `T`, and regression items with a zero label,
/// come back as [`LabelOutcome::Filtered`].
///
/// The only error is a binning configuration error (`T` not a multiple of
/// `unit_seconds`).
pub fn compute_label(c: &Cascade, spec: &TaskSpec, unit_seconds: u64) -> Result<LabelOutcome> {
    let observed_n = c.popularity_at(spec.observation);
    let future_n = match spec.horizon {
        Horizon::At(tp) => c.popularity_at(tp),
        Horizon::Final => c.size(),
    };
    if observed_n < spec.min_observed {
        return Ok(LabelOutcome::Filtered);
    }
    let label = match spec.label_kind {
        LabelKind::Regression => {
            if future_n == 0 {
                return Ok(LabelOutcome::Filtered);
            }
            future_n as f64
        }
        LabelKind::Classification => {
            if future_n >= 2 * observed_n {
                1.0
            } else {
                0.0
            }
        }
    };
    let dynamics = bin_dynamics(c, spec.observation, unit_seconds)?;
    Ok(LabelOutcome::Labeled(LabeledExample {
        cascade_id: c.id.clone(),
        dynamics,
        observed_n,
        label,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.75,
            valid: 0.15,
            test: 0.10,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("split fractions out of range: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, valid, test)` sizes for `n` items; test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon keeps products such as 0.15 * 20 from flooring to 2.
        let train = (self.train * n as f64 + 1e-9).floor() as usize;
        let valid = (self.valid * n as f64 + 1e-9).floor() as usize;
        let valid = valid.min(n - train);
        (train, valid, n - train - valid)
    }
}

/// Chronological train/valid/test partition of cascade ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub fractions: SplitFractions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SplitManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("split manifest: {e}")))
    }
}

/// Sorts by `publish_ts` (ties by id) and cuts the list into train, valid
/// and test by floor arithmetic on the fractions.
pub fn chronological_split(cascades: &[Cascade], fractions: SplitFractions) -> Result<SplitManifest> {
    fractions.validate()?;
    let n = cascades.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 cascades to split, got {n}"
        )));
    }
    let (n_train, n_valid, n_test) = fractions.sizes(n);
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::InvalidInput(format!(
            "{n} cascades give an empty split ({n_train}/{n_valid}/{n_test})"
        )));
    }
    let mut order: Vec<&Cascade> = cascades.iter().collect();
    order.sort_by(|a, b| a.publish_ts.cmp(&b.publish_ts).then_with(|| a.id.cmp(&b.id)));
    let ids: Vec<String> = order.into_iter().map(|c| c.id.clone()).collect();
    Ok(SplitManifest {
        train_ids: ids[..n_train].to_vec(),
        valid_ids: ids[n_train..n_train + n_valid].to_vec(),
        test_ids: ids[n_train + n_valid..].to_vec(),
        fractions,
        seed: None,
    })
}

/// Seeded uniform subsample of `ids` of size `ceil(fraction * len)`,
/// returned in the original order.
pub fn label_budget_ids(ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} not in (0, 1]")));
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput("no training ids to subsample".into()));
    }
    let k = ((fraction * ids.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(ids.len());
    if k == ids.len() {
        return Ok(ids.to_vec());
    }
    let mut rng = seeds::rng(seed, "label_budget", 0);
    let mut picked = index::sample(&mut rng, ids.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

/// Reduced training id list for a few-label regime; valid and test ids are
/// left untouched.
pub fn label_budget(manifest: &SplitManifest, fraction: f64, seed: u64) -> Result<Vec<String>> {
    label_budget_ids(&manifest.train_ids, fraction, seed)
}
