//! Encoder pre-training on elapse inference between slice pairs of
//! unlabeled cascades.

use crate::cascade_data::Cascade;
use crate::dynamics::{slice_log1p, DynamicsConfig};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tcn_model::encoder::{self, EncoderPlan};
use crate::tcn_model::{predict_elapse, Gradients, ModelConfig, ModelParams};
use crate::tei_sampler::{build_with, PairSampling, PretextSet, TeiConfig};

use super::objective::pretext_example;
use super::{grid_search, run_with_early_stopping, EpochSampler, TrainConfig, TrainReport};

/// The pair-drawing scheme used as the pretext.
pub type Pretext = PairSampling;

/// Stream reserved for the fixed validation pairs; epoch `e` uses `e + 1`.
const VALID_STREAM: u64 = u64::MAX;

/// Validation pairs with their slices materialised once.
struct ValidPairs {
    slices: Vec<(Vec<f64>, Vec<f64>)>,
    elapse: Vec<f64>,
}

impl ValidPairs {
    fn new(cascades: &[&Cascade], set: &PretextSet, dynamics: &DynamicsConfig) -> Self {
        let slices = set
            .pairs
            .iter()
            .map(|p| p.slices(cascades[p.cascade_index], dynamics))
            .collect();
        let elapse = set.pairs.iter().map(|p| p.elapse as f64).collect();
        Self { slices, elapse }
    }

    fn mse(&self, params: &ModelParams, plan: &EncoderPlan) -> Result<f64> {
        let mut total = 0.0;
        for ((a, b), &l) in self.slices.iter().zip(&self.elapse) {
            let oa = encoder::encode(params, plan, a)?;
            let ob = encoder::encode(params, plan, b)?;
            total += (l - predict_elapse(&oa, &ob, params)).powi(2);
        }
        Ok(total / self.elapse.len() as f64)
    }
}

/// Pre-trains a freshly initialised model on `train` with early stopping on
/// the elapse MSE of pairs drawn from `valid`, for every learning rate of
/// the grid. Training pairs are redrawn every epoch.
pub fn pretrain(
    train: &[&Cascade],
    valid: &[&Cascade],
    dynamics: &DynamicsConfig,
    tei: &TeiConfig,
    model: &ModelConfig,
    cfg: &TrainConfig,
    pretext: Pretext,
) -> Result<(TrainReport, ModelParams)> {
    dynamics.validate()?;
    tei.validate(dynamics)?;
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidInput("pre-training needs train and valid cascades".into()));
    }
    let initial = ModelParams::init(model)?;
    let plan = EncoderPlan::last_step(model, dynamics.units_per_slice())?;
    let valid_set = build_with(pretext, valid, dynamics, tei, VALID_STREAM)?;
    let valid_pairs = ValidPairs::new(valid, &valid_set, dynamics);
    let first_epoch = build_with(pretext, train, dynamics, tei, 1)?;
    let n_pairs = first_epoch.pairs.len();
    let label = match pretext {
        PairSampling::Tei => "pretrain-tei",
        PairSampling::UniformPairs => "pretrain-uniform-pairs",
    };

    grid_search(label.into(), cfg, n_pairs, |lr| {
        let trainable: Vec<bool> = (0..initial.tensors().len())
            .map(|i| initial.layout().is_encoder(i) || initial.layout().pretext.tensors().contains(&i))
            .collect();
        let mut sampler = EpochSampler::new(n_pairs, cfg.seed, "pretrain.shuffle");
        let mut epoch_set = (0, first_epoch.clone());
        let weight = 1.0 / cfg.batch_size as f64;
        let batch = |params: &ModelParams, step: usize, grads: &mut Gradients| -> Result<f64> {
            let mut rng = seeds::rng(cfg.seed, "pretrain.dropout", step as u64);
            let mut loss = 0.0;
            for (epoch, i) in sampler.next_batch(cfg.batch_size) {
                if epoch_set.0 != epoch {
                    epoch_set = (epoch, build_with(pretext, train, dynamics, tei, epoch + 1)?);
                }
                let pair = &epoch_set.1.pairs[i];
                let (a, b) = (
                    slice_log1p(train[pair.cascade_index].events(), pair.a, dynamics),
                    slice_log1p(train[pair.cascade_index].events(), pair.b, dynamics),
                );
                let (_, l) = pretext_example(
                    params,
                    &plan,
                    &a,
                    &b,
                    pair.elapse as f64,
                    weight,
                    Some(&mut rng),
                    Some(grads),
                )?;
                loss += l * weight;
            }
            Ok(loss)
        };
        run_with_early_stopping(initial.clone(), lr, cfg, &trainable, batch, |p| {
            valid_pairs.mse(p, &plan)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{Split, TrainMode};

    fn corpus() -> Vec<Cascade> {
        (0..12)
            .map(|i| {
                // activity concentrated early, decaying afterwards
                let events: Vec<u64> = (0..40u64).map(|k| k * k * (3 + i % 4)).collect();
                Cascade::new(format!("c{i}"), i as i64, events).unwrap()
            })
            .collect()
    }

    fn setup() -> (DynamicsConfig, TeiConfig, ModelConfig, TrainConfig) {
        let dynamics = DynamicsConfig {
            unit_seconds: 5,
            slice_seconds: 60,
        };
        let tei = TeiConfig {
            l_max: 4,
            pretrain_t: 600,
            pairs_per_cascade: 2,
            ..TeiConfig::default()
        };
        let model = ModelConfig {
            kernel_k: 2,
            layers_l: 2,
            hidden_channels: 2,
            mlp_hidden: 4,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            batch_size: 4,
            lr_grid: vec![1e-3, 1e-2],
            patience: 2,
            validate_every: 5,
            max_steps: 40,
            mode: TrainMode::Pretrain,
            seed: 3,
        };
        (dynamics, tei, model, train)
    }

    #[test]
    fn pretraining_is_deterministic_and_reports_best() {
        let cs = corpus();
        let refs: Vec<&Cascade> = cs.iter().collect();
        let (d, t, m, c) = setup();
        let (r1, p1) = pretrain(&refs[..9], &refs[9..], &d, &t, &m, &c, Pretext::Tei).unwrap();
        let (r2, p2) = pretrain(&refs[..9], &refs[9..], &d, &t, &m, &c, Pretext::Tei).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.curve, r2.curve);
        assert_eq!(r1.grid.len(), 2);
        let best = r1
            .curve
            .iter()
            .filter(|p| p.split == Split::Valid)
            .map(|p| p.loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r1.best_val_loss, best);
        // the downstream head never moves during pre-training
        let fresh = ModelParams::init(&m).unwrap();
        for i in fresh.layout().downstream.tensors() {
            assert_eq!(p1.data(i), fresh.data(i));
        }
    }

    #[test]
    fn uniform_pairs_pretext_runs() {
        let cs = corpus();
        let refs: Vec<&Cascade> = cs.iter().collect();
        let (d, t, m, c) = setup();
        let (r, _) = pretrain(&refs[..9], &refs[9..], &d, &t, &m, &c, Pretext::UniformPairs).unwrap();
        assert_eq!(r.label, "pretrain-uniform-pairs");
    }
}
