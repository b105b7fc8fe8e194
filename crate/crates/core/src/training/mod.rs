//! Pre-training on the elapse-inference objective, downstream fine-tuning
//! in frozen and full modes, early stopping and learning-rate selection.

pub mod finetune;
pub mod losses;
pub mod objective;
pub mod pretrain;

use std::fmt::{self, Write as _};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tcn_model::{Adam, Gradients, ModelParams};

pub use finetune::{finetune, model_input, FeatureCache, Init};
pub use losses::{bce_loss, mrse_loss};
pub use pretrain::{pretrain, Pretext};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Pretrain,
    FinetuneFull,
    FinetuneFreeze,
}

/// The four transfer regimes: random or pre-trained encoder, frozen or
/// fully fine-tuned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "TCN")]
    Tcn,
    #[serde(rename = "TCN-f")]
    TcnF,
    #[serde(rename = "PREP-TCN")]
    PrepTcn,
    #[serde(rename = "PREP-TCN-f")]
    PrepTcnF,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::TcnF, Regime::PrepTcnF, Regime::Tcn, Regime::PrepTcn];

    pub fn new(pretrained: bool, frozen: bool) -> Self {
        match (pretrained, frozen) {
            (false, false) => Regime::Tcn,
            (false, true) => Regime::TcnF,
            (true, false) => Regime::PrepTcn,
            (true, true) => Regime::PrepTcnF,
        }
    }

    pub fn is_pretrained(self) -> bool {
        matches!(self, Regime::PrepTcn | Regime::PrepTcnF)
    }

    pub fn is_frozen(self) -> bool {
        matches!(self, Regime::TcnF | Regime::PrepTcnF)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Tcn => "TCN",
            Regime::TcnF => "TCN-f",
            Regime::PrepTcn => "PREP-TCN",
            Regime::PrepTcnF => "PREP-TCN-f",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_LR_GRID: [f64; 7] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    /// Consecutive validation checks without improvement before stopping.
    pub patience: usize,
    /// Mini-batches between validation checks.
    pub validate_every: usize,
    pub max_steps: usize,
    /// Set by the pipeline that runs the configuration.
    #[serde(skip)]
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            patience: 50,
            validate_every: 100,
            max_steps: 20_000,
            mode: TrainMode::Pretrain,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.validate_every < 1 {
            return Err(Error::Config("validate_every must be >= 1".into()));
        }
        if self.lr_grid.is_empty() {
            return Err(Error::Config("lr_grid is empty".into()));
        }
        if let Some(lr) = self.lr_grid.iter().find(|&&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub lr: f64,
    /// `None` when the run diverged.
    pub best_val_loss: Option<f64>,
    pub best_step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub label: String,
    pub lr: f64,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub train_examples: usize,
    pub wall_clock_secs: f64,
    pub grid: Vec<GridEntry>,
    /// Curve of the selected learning rate.
    pub curve: Vec<CurvePoint>,
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    /// `step,split,loss` rows of the selected run.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,split,loss\n");
        for p in &self.curve {
            let split = match p.split {
                Split::Train => "train",
                Split::Valid => "valid",
            };
            writeln!(out, "{},{},{}", p.step, split, p.loss).unwrap();
        }
        out
    }

    pub fn valid_curve(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.curve
            .iter()
            .filter(|p| p.split == Split::Valid)
            .map(|p| (p.step, p.loss))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Outcome of one learning rate.
pub(crate) struct RunOutcome {
    pub params: ModelParams,
    pub best_val: f64,
    pub best_step: usize,
    pub steps: usize,
    pub curve: Vec<CurvePoint>,
}

/// Adam with early stopping on a validation loss checked every
/// `validate_every` steps (and once before training). Returns the
/// parameters of the best check.
pub(crate) fn run_with_early_stopping(
    mut params: ModelParams,
    lr: f64,
    cfg: &TrainConfig,
    trainable: &[bool],
    mut batch_grad: impl FnMut(&ModelParams, usize, &mut Gradients) -> Result<f64>,
    mut validate: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<RunOutcome> {
    let diverged = |what: &str, step: usize| Error::Diverged {
        lr,
        message: format!("non-finite {what} at step {step}"),
    };
    let mut opt = Adam::new(&params, lr)?;
    let mut grads = Gradients::zeros_like(&params);
    let mut curve = Vec::new();
    let initial = validate(&params)?;
    if !initial.is_finite() {
        return Err(diverged("validation loss", 0));
    }
    curve.push(CurvePoint {
        step: 0,
        split: Split::Valid,
        loss: initial,
    });
    let mut best = (initial, 0, params.clone());
    let mut since_best = 0;
    let mut train_sum = 0.0;
    let mut train_count = 0;
    let mut steps = 0;
    for step in 1..=cfg.max_steps {
        steps = step;
        grads.clear();
        let loss = batch_grad(&params, step, &mut grads)?;
        if !loss.is_finite() {
            return Err(diverged("training loss", step));
        }
        grads.check_finite(&params)?;
        opt.step(&mut params, &grads, trainable)
            .map_err(|e| Error::Diverged {
                lr,
                message: format!("{e} at step {step}"),
            })?;
        train_sum += loss;
        train_count += 1;
        if step % cfg.validate_every != 0 {
            continue;
        }
        curve.push(CurvePoint {
            step,
            split: Split::Train,
            loss: train_sum / train_count as f64,
        });
        train_sum = 0.0;
        train_count = 0;
        let val = validate(&params)?;
        if !val.is_finite() {
            return Err(diverged("validation loss", step));
        }
        curve.push(CurvePoint {
            step,
            split: Split::Valid,
            loss: val,
        });
        if val < best.0 {
            best = (val, step, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(RunOutcome {
        params: best.2,
        best_val: best.0,
        best_step: best.1,
        steps,
        curve,
    })
}

/// Index of the smallest loss; ties go to the smaller learning rate.
/// Entries with `None` loss are skipped.
pub fn select_lr(entries: &[(f64, Option<f64>)]) -> Option<usize> {
    entries
        .iter()
        .enumerate()
        .filter_map(|(i, (lr, loss))| loss.map(|l| (i, *lr, l)))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.1.total_cmp(&b.1)))
        .map(|(i, _, _)| i)
}

/// Runs every learning rate of the grid from the same initial parameters
/// and keeps the best. Diverged rates are recorded and skipped; if all
/// diverge the last divergence is returned.
pub(crate) fn grid_search(
    label: String,
    cfg: &TrainConfig,
    train_examples: usize,
    mut run: impl FnMut(f64) -> Result<RunOutcome>,
) -> Result<(TrainReport, ModelParams)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut last_err = None;
    for &lr in &cfg.lr_grid {
        match run(lr) {
            Ok(o) => outcomes.push((lr, Some(o))),
            Err(e @ Error::Diverged { .. }) | Err(e @ Error::NonFinite { .. }) => {
                last_err = Some(e);
                outcomes.push((lr, None));
            }
            Err(e) => return Err(e),
        }
    }
    let entries: Vec<(f64, Option<f64>)> = outcomes
        .iter()
        .map(|(lr, o)| (*lr, o.as_ref().map(|o| o.best_val)))
        .collect();
    let Some(best) = select_lr(&entries) else {
        return Err(last_err.expect("empty grid rejected by validate"));
    };
    let grid = outcomes
        .iter()
        .map(|(lr, o)| GridEntry {
            lr: *lr,
            best_val_loss: o.as_ref().map(|o| o.best_val),
            best_step: o.as_ref().map_or(0, |o| o.best_step),
        })
        .collect();
    let (lr, outcome) = outcomes.swap_remove(best);
    let outcome = outcome.expect("selected entry has an outcome");
    let report = TrainReport {
        label,
        lr,
        best_val_loss: outcome.best_val,
        best_step: outcome.best_step,
        steps_run: outcome.steps,
        train_examples,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        grid,
        curve: outcome.curve,
        checkpoint_path: None,
    };
    Ok((report, outcome.params))
}

/// First validation step at which each run's loss is at or below
/// `threshold`; `None` when it never gets there.
pub fn convergence_probe(reports: &[&TrainReport], threshold: f64) -> Vec<Option<usize>> {
    reports
        .iter()
        .map(|r| r.valid_curve().find(|&(_, l)| l <= threshold).map(|(s, _)| s))
        .collect()
}

/// `label,threshold,crossing_step` rows; an empty step means never.
pub fn convergence_csv(reports: &[&TrainReport], threshold: f64) -> String {
    let mut out = String::from("label,threshold,crossing_step\n");
    for (r, s) in reports.iter().zip(convergence_probe(reports, threshold)) {
        let step = s.map(|s| s.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.label, threshold, step).unwrap();
    }
    out
}

/// Deterministic position-stream over a shuffled index set: each epoch is
/// a fresh seeded permutation.
pub(crate) struct EpochSampler {
    n: usize,
    seed: u64,
    component: &'static str,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64, component: &'static str) -> Self {
        assert!(n > 0);
        let mut s = Self {
            n,
            seed,
            component,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order = (0..self.n).collect();
        let mut rng = crate::seeds::rng(self.seed, self.component, self.epoch);
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<(u64, usize)> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push((self.epoch, self.order[self.cursor]));
            self.cursor += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcn_model::ModelConfig;

    #[test]
    fn lr_selection_prefers_smaller_on_ties() {
        let e = [(1e-3, Some(0.5)), (1e-4, Some(0.5)), (1e-2, Some(0.7))];
        assert_eq!(select_lr(&e), Some(1));
        let e = [(1e-3, None), (1e-2, Some(0.9))];
        assert_eq!(select_lr(&e), Some(1));
        assert_eq!(select_lr(&[(1e-3, None)]), None);
    }

    #[test]
    fn regime_names() {
        let names: Vec<&str> = Regime::ALL.iter().map(|r| r.as_str()).collect();
        assert_eq!(names, vec!["TCN-f", "PREP-TCN-f", "TCN", "PREP-TCN"]);
        assert_eq!(Regime::new(true, true), Regime::PrepTcnF);
        assert_eq!(Regime::new(false, true), Regime::TcnF);
    }

    fn tiny() -> ModelParams {
        ModelParams::init(&ModelConfig {
            layers_l: 1,
            hidden_channels: 1,
            mlp_hidden: 1,
            kernel_k: 1,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn early_stopping_restores_best_check() {
        let p = tiny();
        let cfg = TrainConfig {
            patience: 3,
            validate_every: 1,
            max_steps: 100,
            ..TrainConfig::default()
        };
        let trainable = vec![true; p.tensors().len()];
        let losses = [5.0, 4.0, 2.0, 3.0, 2.5, 2.0, 6.0, 1.0];
        let mut k = 0;
        let out = run_with_early_stopping(
            p,
            1e-3,
            &cfg,
            &trainable,
            |_, _, _| Ok(1.0),
            |_| {
                let l = losses[k];
                k += 1;
                Ok(l)
            },
        )
        .unwrap();
        // checks: step0=5, 1=4, 2=2 (best), 3=3, 4=2.5, 5=2.0 (tie, no improvement) -> stop
        assert_eq!(out.best_step, 2);
        assert_eq!(out.best_val, 2.0);
        assert_eq!(out.steps, 5);
        let min = out
            .curve
            .iter()
            .filter(|c| c.split == Split::Valid)
            .map(|c| c.loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val, min);
    }

    #[test]
    fn nan_loss_aborts_with_lr() {
        let p = tiny();
        let trainable = vec![true; p.tensors().len()];
        let err = run_with_early_stopping(
            p,
            0.5,
            &TrainConfig::default(),
            &trainable,
            |_, _, _| Ok(f64::NAN),
            |_| Ok(1.0),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::Diverged { lr, .. } if lr == 0.5));
    }

    fn report(label: &str, curve: &[(usize, f64)]) -> TrainReport {
        TrainReport {
            label: label.into(),
            lr: 1e-3,
            best_val_loss: 0.0,
            best_step: 0,
            steps_run: 0,
            train_examples: 0,
            wall_clock_secs: 0.0,
            grid: vec![],
            curve: curve
                .iter()
                .map(|&(step, loss)| CurvePoint {
                    step,
                    split: Split::Valid,
                    loss,
                })
                .collect(),
            checkpoint_path: None,
        }
    }

    #[test]
    fn probe_crossings() {
        let a = report("a", &[(0, 3.0), (10, 1.5), (20, 0.9)]);
        let b = report("b", &[(0, 3.0), (10, 1.0), (20, 0.8)]);
        assert_eq!(convergence_probe(&[&a, &b], 1.0), vec![Some(20), Some(10)]);
        assert_eq!(convergence_probe(&[&a, &a], 1.0), vec![Some(20), Some(20)]);
        assert_eq!(convergence_probe(&[&a, &b], 0.1), vec![None, None]);
        assert_eq!(convergence_csv(&[&a], 0.1), "label,threshold,crossing_step\na,0.1,\n");
    }

    #[test]
    fn epoch_sampler_covers_each_epoch() {
        let mut s = EpochSampler::new(5, 1, "t");
        let first: Vec<usize> = s.next_batch(5).into_iter().map(|x| x.1).collect();
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let next = s.next_batch(3);
        assert!(next.iter().all(|x| x.0 == 1));
    }
}
