//! Downstream fine-tuning from a pre-trained or random encoder, with the
//! encoder frozen or trained end to end.

use crate::cascade_data::{LabelKind, LabeledExample, TaskSpec};
use crate::dynamics::Transform;
use crate::error::{Error, Result};
use crate::seeds;
use crate::tcn_model::encoder::{self, EncoderPlan};
use crate::tcn_model::{Gradients, ModelConfig, ModelParams};

use super::objective::{downstream_example, head_example};
use super::{grid_search, run_with_early_stopping, EpochSampler, Regime, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Pretrained(&'a ModelParams),
    Random,
}

/// Log-scaled model input of an example.
pub fn model_input(example: &LabeledExample) -> Vec<f64> {
    match example.dynamics.transform() {
        Transform::Raw => example.dynamics.values().iter().map(|v| v.ln_1p()).collect(),
        Transform::Log1p => example.dynamics.values().to_vec(),
    }
}

/// Eval-mode encoder outputs of a fixed example list, reused while only the
/// head is trained.
pub struct FeatureCache {
    pub features: Vec<Vec<f64>>,
}

impl FeatureCache {
    pub fn new(params: &ModelParams, plan: &EncoderPlan, examples: &[LabeledExample]) -> Result<Self> {
        let features = examples
            .iter()
            .map(|e| encoder::encode(params, plan, &model_input(e)))
            .collect::<Result<_>>()?;
        Ok(Self { features })
    }
}

fn window_len(examples: &[LabeledExample], task: &TaskSpec) -> Result<usize> {
    let len = examples[0].dynamics.values().len();
    if let Some(e) = examples.iter().find(|e| e.dynamics.values().len() != len) {
        return Err(Error::InvalidInput(format!(
            "example {} has {} bins, expected {len} for task {}",
            e.cascade_id,
            e.dynamics.values().len(),
            task.name
        )));
    }
    Ok(len)
}

/// Builds the starting parameters for a run: a fresh model from `seed`,
/// the pre-trained encoder copied in when given, and a freshly drawn
/// downstream head.
pub fn initial_params(model: &ModelConfig, init: Init<'_>, seed: u64) -> Result<ModelParams> {
    let mut cfg = model.clone();
    cfg.seed = seeds::derive(seed, "finetune.init", 0);
    let mut params = ModelParams::init(&cfg)?;
    if let Init::Pretrained(pre) = init {
        pre.ensure_architecture(model)?;
        params.copy_encoder_from(pre)?;
    }
    let head = params.layout().downstream.tensors();
    params.reinit(&head, seeds::derive(seed, "finetune.head", 0));
    Ok(params)
}

/// Mean per-example loss (MRSE term or BCE) of `params` on `examples`.
pub fn eval_loss(params: &ModelParams, plan: &EncoderPlan, examples: &[LabeledExample], kind: LabelKind) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        let (_, l) = downstream_example(
            params,
            plan,
            &model_input(e),
            e.observed_n as f64,
            e.label,
            kind,
            1.0,
            None,
            None,
            false,
        )?;
        total += l;
    }
    Ok(total / examples.len() as f64)
}

/// Fine-tunes on `train` with early stopping on the `valid` loss, for every
/// learning rate of the grid, and returns the best run.
pub fn finetune(
    init: Init<'_>,
    model: &ModelConfig,
    task: &TaskSpec,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    frozen: bool,
) -> Result<(TrainReport, ModelParams)> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidInput(format!(
            "task {}: {} train and {} valid examples after filtering",
            task.name,
            train.len(),
            valid.len()
        )));
    }
    let n = window_len(train, task)?;
    if window_len(valid, task)? != n {
        return Err(Error::InvalidInput(format!("task {}: train and valid windows differ", task.name)));
    }
    let kind = task.label_kind;
    let regime = Regime::new(matches!(init, Init::Pretrained(_)), frozen);
    let initial = initial_params(model, init, cfg.seed)?;
    let plan = EncoderPlan::last_step(model, n)?;
    let layout = initial.layout().clone();
    let trainable: Vec<bool> = (0..initial.tensors().len())
        .map(|i| layout.downstream.tensors().contains(&i) || (!frozen && layout.is_encoder(i)))
        .collect();
    let caches = if frozen {
        Some((
            FeatureCache::new(&initial, &plan, train)?,
            FeatureCache::new(&initial, &plan, valid)?,
        ))
    } else {
        None
    };
    let label = format!("{}-{}", task.name, regime);
    let weight = 1.0 / cfg.batch_size as f64;

    grid_search(label, cfg, train.len(), |lr| {
        let mut sampler = EpochSampler::new(train.len(), cfg.seed, "finetune.shuffle");
        match &caches {
            Some((train_f, valid_f)) => {
                let batch = |params: &ModelParams, _step: usize, grads: &mut Gradients| -> Result<f64> {
                    let mut loss = 0.0;
                    for (_, i) in sampler.next_batch(cfg.batch_size) {
                        let e = &train[i];
                        let (_, l, _) = head_example(
                            params,
                            &train_f.features[i],
                            e.observed_n as f64,
                            e.label,
                            kind,
                            weight,
                            Some(grads),
                        );
                        loss += l * weight;
                    }
                    Ok(loss)
                };
                let validate = |params: &ModelParams| -> Result<f64> {
                    let total: f64 = valid
                        .iter()
                        .zip(&valid_f.features)
                        .map(|(e, o)| head_example(params, o, e.observed_n as f64, e.label, kind, 1.0, None).1)
                        .sum();
                    Ok(total / valid.len() as f64)
                };
                run_with_early_stopping(initial.clone(), lr, cfg, &trainable, batch, validate)
            }
            None => {
                let batch = |params: &ModelParams, step: usize, grads: &mut Gradients| -> Result<f64> {
                    let mut rng = seeds::rng(cfg.seed, "finetune.dropout", step as u64);
                    let mut loss = 0.0;
                    for (_, i) in sampler.next_batch(cfg.batch_size) {
                        let e = &train[i];
                        let (_, l) = downstream_example(
                            params,
                            &plan,
                            &model_input(e),
                            e.observed_n as f64,
                            e.label,
                            kind,
                            weight,
                            Some(&mut rng),
                            Some(grads),
                            true,
                        )?;
                        loss += l * weight;
                    }
                    Ok(loss)
                };
                let validate = |params: &ModelParams| eval_loss(params, &plan, valid, kind);
                run_with_early_stopping(initial.clone(), lr, cfg, &trainable, batch, validate)
            }
        }
    })
}
