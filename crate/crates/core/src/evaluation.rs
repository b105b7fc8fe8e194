//! Test-set metrics and result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cascade_data::{LabelKind, LabeledExample, TaskSpec};
use crate::error::{Error, Result};
use crate::tcn_model::encoder::{self, EncoderPlan};
use crate::tcn_model::{predict_downstream, ModelParams};
use crate::training::losses::mrse_loss;
use crate::training::model_input;

pub const R_ACC_EPSILON: f64 = 0.3;
pub const CLASSIFICATION_THRESHOLD: f64 = 0.5;

pub const MRSE: &str = "MRSE";
pub const R_ACC: &str = "R-Acc";
pub const C_ACC: &str = "C-Acc";
pub const F1: &str = "F1";

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("{a} labels but {b} predictions")));
    }
    if a == 0 {
        return Err(Error::InvalidInput("no examples to score".into()));
    }
    Ok(())
}

/// Fraction of items whose absolute percentage error `|y - ŷ| / y` is at
/// most `epsilon`.
pub fn r_acc(y: &[f64], y_hat: &[f64], epsilon: f64) -> Result<f64> {
    check_pairs(y.len(), y_hat.len())?;
    if let Some(bad) = y.iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!("R-Acc undefined for label {bad}")));
    }
    let hits = y
        .iter()
        .zip(y_hat)
        .filter(|(y, p)| (*y - *p).abs() / *y <= epsilon)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub c_acc: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

/// Accuracy and F1 (positive class: label 1) of `p >= threshold`. F1 is 0
/// when there are no true positives.
pub fn classification_metrics(y: &[f64], p: &[f64], threshold: f64) -> Result<ClassificationMetrics> {
    check_pairs(y.len(), p.len())?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&y, &p) in y.iter().zip(p) {
        match (y >= 0.5, p >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(ClassificationMetrics {
        c_acc: (tp + tn) as f64 / y.len() as f64,
        f1,
        true_pos: tp,
        false_pos: fp,
        false_neg: fn_,
        true_neg: tn,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    pub regime: String,
    pub metrics: BTreeMap<String, f64>,
    pub n_examples: usize,
    pub seed: u64,
}

impl EvalResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cascade_id: String,
    pub label: f64,
    pub prediction: f64,
}

/// `cascade_id,label,prediction` rows.
pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut out = String::from("cascade_id,label,prediction\n");
    for p in preds {
        writeln!(out, "{},{},{}", p.cascade_id, p.label, p.prediction).unwrap();
    }
    out
}

/// Eval-mode predictions: `N(T) + softplus(r)` for regression, the
/// doubling probability for classification.
pub fn predict(params: &ModelParams, task: &TaskSpec, unit_seconds: u64, examples: &[LabeledExample]) -> Result<Vec<Prediction>> {
    if unit_seconds == 0 || !task.observation.is_multiple_of(unit_seconds) {
        return Err(Error::Config(format!(
            "observation window {}s is not a multiple of the {unit_seconds}s unit",
            task.observation
        )));
    }
    let n = (task.observation / unit_seconds) as usize;
    if let Some(e) = examples.iter().find(|e| e.dynamics.values().len() != n) {
        return Err(Error::InvalidInput(format!(
            "example {} has {} bins but task {} expects {n}",
            e.cascade_id,
            e.dynamics.values().len(),
            task.name
        )));
    }
    let plan = EncoderPlan::last_step(params.config(), n)?;
    examples
        .iter()
        .map(|e| {
            let o = encoder::encode(params, &plan, &model_input(e))?;
            Ok(Prediction {
                cascade_id: e.cascade_id.clone(),
                label: e.label,
                prediction: predict_downstream(&o, e.observed_n as f64, params, task.label_kind),
            })
        })
        .collect()
}

/// Metrics of `kind` over predictions of a task with that label kind.
pub fn score(task: &TaskSpec, kind: LabelKind, preds: &[Prediction]) -> Result<BTreeMap<String, f64>> {
    if kind != task.label_kind {
        return Err(Error::InvalidInput(format!(
            "{kind:?} metrics requested for {:?} task {}",
            task.label_kind, task.name
        )));
    }
    let y: Vec<f64> = preds.iter().map(|p| p.label).collect();
    let y_hat: Vec<f64> = preds.iter().map(|p| p.prediction).collect();
    let mut m = BTreeMap::new();
    match kind {
        LabelKind::Regression => {
            m.insert(MRSE.to_string(), mrse_loss(&y, &y_hat)?);
            m.insert(R_ACC.to_string(), r_acc(&y, &y_hat, R_ACC_EPSILON)?);
        }
        LabelKind::Classification => {
            let c = classification_metrics(&y, &y_hat, CLASSIFICATION_THRESHOLD)?;
            m.insert(C_ACC.to_string(), c.c_acc);
            m.insert(F1.to_string(), c.f1);
        }
    }
    Ok(m)
}

/// Scores `params` on `examples` with the metrics of the task's label kind.
pub fn evaluate(
    params: &ModelParams,
    task: &TaskSpec,
    unit_seconds: u64,
    examples: &[LabeledExample],
    regime: &str,
    seed: u64,
) -> Result<(EvalResult, Vec<Prediction>)> {
    let preds = predict(params, task, unit_seconds, examples)?;
    let metrics = score(task, task.label_kind, &preds)?;
    Ok((
        EvalResult {
            task: task.name.clone(),
            regime: regime.to_string(),
            metrics,
            n_examples: examples.len(),
            seed,
        },
        preds,
    ))
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

const METRIC_ORDER: [&str; 4] = [MRSE, R_ACC, C_ACC, F1];

/// Long-format results: `task,regime,seed,n_examples,metric,value`.
pub fn results_csv(results: &[EvalResult]) -> String {
    let mut out = String::from("task,regime,seed,n_examples,metric,value\n");
    for r in results {
        for name in METRIC_ORDER {
            if let Some(v) = r.metric(name) {
                writeln!(out, "{},{},{},{},{},{}", r.task, r.regime, r.seed, r.n_examples, name, v).unwrap();
            }
        }
    }
    out
}

/// One row per regime, one column per task metric; each cell is the median
/// over seeds. Percent metrics are printed as percentages.
pub fn results_table(results: &[EvalResult]) -> String {
    let mut regimes: Vec<&str> = Vec::new();
    let mut columns: Vec<(String, &str)> = Vec::new();
    for r in results {
        if !regimes.contains(&r.regime.as_str()) {
            regimes.push(&r.regime);
        }
        for name in METRIC_ORDER {
            if r.metrics.contains_key(name) && !columns.iter().any(|(t, m)| *t == r.task && *m == name) {
                columns.push((r.task.clone(), name));
            }
        }
    }
    columns.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let pos = |m: &str| METRIC_ORDER.iter().position(|x| *x == m);
            pos(a.1).cmp(&pos(b.1))
        })
    });
    let mut header = vec!["Method".to_string()];
    header.extend(columns.iter().map(|(t, m)| format!("{t} {m}")));
    let mut rows = vec![header];
    for regime in &regimes {
        let mut row = vec![regime.to_string()];
        for (task, metric) in &columns {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| r.regime == *regime && r.task == *task)
                .filter_map(|r| r.metric(metric))
                .collect();
            row.push(match median(&vals) {
                None => "-".into(),
                Some(v) if *metric == MRSE || *metric == F1 => format!("{v:.3}"),
                Some(v) => format!("{:.1}%", 100.0 * v),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade_data::{compute_label, Cascade, Horizon};
    use crate::tcn_model::ModelConfig;
    use proptest::prelude::*;

    #[test]
    fn r_acc_boundary_is_inclusive() {
        assert_eq!(r_acc(&[10.0], &[13.0], 0.3).unwrap(), 1.0);
        assert_eq!(r_acc(&[10.0], &[13.01], 0.3).unwrap(), 0.0);
        assert_eq!(r_acc(&[4.0, 9.0, 2.0], &[4.0, 9.0, 2.0], 0.3).unwrap(), 1.0);
        assert!(r_acc(&[], &[], 0.3).is_err());
    }

    #[test]
    fn classification_fixtures() {
        let all_neg = classification_metrics(&[1.0, 0.0, 1.0, 0.0], &[0.1, 0.2, 0.3, 0.4], 0.5).unwrap();
        assert_eq!(all_neg.c_acc, 0.5);
        assert_eq!(all_neg.f1, 0.0);
        let perfect = classification_metrics(&[1.0, 0.0], &[0.9, 0.1], 0.5).unwrap();
        assert_eq!((perfect.c_acc, perfect.f1), (1.0, 1.0));
        // TP=2, FP=1, FN=1
        let c = classification_metrics(&[1.0, 1.0, 0.0, 1.0, 0.0], &[0.8, 0.5, 0.7, 0.2, 0.1], 0.5).unwrap();
        assert_eq!((c.true_pos, c.false_pos, c.false_neg), (2, 1, 1));
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(classification_metrics(&[], &[], 0.5).is_err());
    }

    fn examples(task: &TaskSpec) -> Vec<LabeledExample> {
        (0..6)
            .filter_map(|i| {
                let events: Vec<u64> = (0..20u64).map(|k| k * (2 + i)).collect();
                let c = Cascade::new(format!("c{i}"), 0, events).unwrap();
                compute_label(&c, task, 5).unwrap().into_example()
            })
            .collect()
    }

    fn small() -> ModelParams {
        ModelParams::init(&ModelConfig {
            kernel_k: 2,
            layers_l: 2,
            hidden_channels: 2,
            mlp_hidden: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn evaluate_is_deterministic_and_matches_dumped_pairs() {
        let task = TaskSpec::new("t", 30, Horizon::Final, LabelKind::Regression, 1).unwrap();
        let ex = examples(&task);
        let p = small();
        let (a, preds) = evaluate(&p, &task, 5, &ex, "TCN", 0).unwrap();
        let (b, _) = evaluate(&p, &task, 5, &ex, "TCN", 0).unwrap();
        assert_eq!(a, b);
        let y: Vec<f64> = preds.iter().map(|p| p.label).collect();
        let y_hat: Vec<f64> = preds.iter().map(|p| p.prediction).collect();
        assert_eq!(a.metric(MRSE).unwrap(), mrse_loss(&y, &y_hat).unwrap());
        assert!(a.metric(C_ACC).is_none());
    }

    #[test]
    fn contract_errors() {
        let task = TaskSpec::new("t", 30, Horizon::Final, LabelKind::Classification, 1).unwrap();
        let ex = examples(&task);
        let preds = predict(&small(), &task, 5, &ex).unwrap();
        assert!(score(&task, LabelKind::Regression, &preds).is_err());
        let longer = TaskSpec::new("t", 60, Horizon::Final, LabelKind::Classification, 1).unwrap();
        assert!(predict(&small(), &longer, 5, &ex).is_err());
    }

    #[test]
    fn table_shape() {
        let mk = |regime: &str, seed, v| EvalResult {
            task: "T2".into(),
            regime: regime.into(),
            metrics: [(MRSE.to_string(), v), (R_ACC.to_string(), 0.25)].into_iter().collect(),
            n_examples: 10,
            seed,
        };
        let rs = vec![mk("TCN-f", 0, 0.5), mk("TCN-f", 1, 0.7), mk("TCN-f", 2, 0.1), mk("PREP-TCN-f", 0, 0.2)];
        let table = results_table(&rs);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Method"));
        assert!(lines[1].starts_with("TCN-f") && lines[1].contains("0.500") && lines[1].contains("25.0%"));
        assert_eq!(results_csv(&rs).lines().count(), 1 + 8);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn r_acc_monotone_under_shrinking_errors(
            rows in proptest::collection::vec((1.0f64..1000.0, -2.0f64..2.0), 1..30),
            shrink in 0.0f64..1.0,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y_hat: Vec<f64> = rows.iter().map(|r| r.0 * (1.0 + r.1)).collect();
            let closer: Vec<f64> = rows.iter().map(|r| r.0 * (1.0 + r.1 * shrink)).collect();
            prop_assert!(r_acc(&y, &closer, 0.3).unwrap() >= r_acc(&y, &y_hat, 0.3).unwrap());
        }

        #[test]
        fn classification_invariants(rows in proptest::collection::vec((0u8..2, 0.001f64..0.999), 1..40)) {
            let y: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
            let p: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let m = classification_metrics(&y, &p, 0.5).unwrap();
            prop_assert_eq!(m.true_pos + m.true_neg + m.false_pos + m.false_neg, y.len());
            let errors = (m.false_pos + m.false_neg) as f64 / y.len() as f64;
            prop_assert!((m.c_acc + errors - 1.0).abs() <= f64::EPSILON);
            prop_assert!((0.0..=1.0).contains(&m.f1));
            let mut ry = y.clone();
            let mut rp = p.clone();
            ry.reverse();
            rp.reverse();
            prop_assert_eq!(classification_metrics(&ry, &rp, 0.5).unwrap(), m);
        }
    }
}
