//! The experiment configuration file and the end-to-end pipelines behind
//! the `prep` subcommands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade_data::{
    chronological_split, compute_label, label_budget_ids, Cascade, LabeledExample, Platform, SplitFractions,
    SplitManifest, TaskId, TaskSpec,
};
use crate::dynamics::DynamicsConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, median, EvalResult, Prediction};
use crate::seeds;
use crate::synthetic::GenConfig;
use crate::tcn_model::{ModelConfig, ModelParams};
use crate::tei_sampler::{PairSampling, TeiConfig};
use crate::training::{finetune, pretrain, Init, Regime, TrainConfig, TrainMode, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub unit_seconds: u64,
    pub slice_seconds: u64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub platform: Platform,
    /// Downstream examples with fewer observed events are dropped.
    pub min_observed: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DynamicsConfig::default();
        let f = SplitFractions::default();
        Self {
            unit_seconds: d.unit_seconds,
            slice_seconds: d.slice_seconds,
            train_fraction: f.train,
            valid_fraction: f.valid,
            test_fraction: f.test,
            platform: Platform::Weibo,
            min_observed: 10,
        }
    }
}

impl DataConfig {
    pub fn dynamics(&self) -> DynamicsConfig {
        DynamicsConfig {
            unit_seconds: self.unit_seconds,
            slice_seconds: self.slice_seconds,
        }
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            valid: self.valid_fraction,
            test: self.test_fraction,
        }
    }
}

/// Optimisation settings for the two phases.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSections {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TasksConfig {
    pub tasks: Vec<TaskId>,
    pub label_fraction: f64,
    /// Freeze the encoder when fine-tuning in the pretext comparison.
    pub freeze: bool,
    /// Run seeds for repeated experiments; results are reported per seed
    /// and as medians.
    pub seeds: Vec<u64>,
}

impl Default for TasksConfig {
    fn default() -> Self {
        Self {
            tasks: TaskId::ALL.to_vec(),
            label_fraction: 1.0,
            freeze: false,
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub synthetic: GenConfig,
    pub tei: TeiConfig,
    pub model: ModelConfig,
    pub train: TrainSections,
    pub tasks: TasksConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let dynamics = self.data.dynamics();
        dynamics.validate()?;
        self.data.fractions().validate()?;
        if self.data.min_observed < 1 {
            return Err(Error::Config("min_observed must be >= 1".into()));
        }
        self.synthetic.validate()?;
        self.tei.validate(&dynamics)?;
        self.model.validate()?;
        self.train.pretrain.validate()?;
        self.train.finetune.validate()?;
        let fraction = self.tasks.label_fraction;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("label_fraction {fraction} not in (0, 1]")));
        }
        if self.tasks.tasks.is_empty() {
            return Err(Error::Config("no tasks configured".into()));
        }
        if self.tasks.seeds.is_empty() {
            return Err(Error::Config("no run seeds configured".into()));
        }
        for id in &self.tasks.tasks {
            let spec = self.task_spec(*id)?;
            if spec.observation % dynamics.unit_seconds != 0 {
                return Err(Error::Config(format!(
                    "task {id} window {}s is not a multiple of the {}s unit",
                    spec.observation, dynamics.unit_seconds
                )));
            }
        }
        Ok(())
    }

    pub fn task_spec(&self, id: TaskId) -> Result<TaskSpec> {
        id.spec(self.data.platform, self.data.min_observed)
    }

    /// Copy whose sampler, initialisation and training seeds are derived
    /// from the configured ones and `run`.
    pub fn with_run_seed(&self, run: u64) -> Self {
        let mut c = self.clone();
        c.tei.seed = seeds::derive(self.tei.seed, "run.tei", run);
        c.model.seed = seeds::derive(self.model.seed, "run.model", run);
        c.train.pretrain.seed = seeds::derive(self.train.pretrain.seed, "run.pretrain", run);
        c.train.finetune.seed = seeds::derive(self.train.finetune.seed, "run.finetune", run);
        c
    }
}

/// A cascade corpus with its chronological split.
pub struct Corpus {
    pub cascades: Vec<Cascade>,
    pub manifest: SplitManifest,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(cascades: Vec<Cascade>, fractions: SplitFractions) -> Result<Self> {
        let manifest = chronological_split(&cascades, fractions)?;
        Self::with_manifest(cascades, manifest)
    }

    pub fn with_manifest(cascades: Vec<Cascade>, manifest: SplitManifest) -> Result<Self> {
        let index: HashMap<String, usize> = cascades.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        let listed = manifest.train_ids.iter().chain(&manifest.valid_ids).chain(&manifest.test_ids);
        if let Some(missing) = listed.clone().find(|id| !index.contains_key(*id)) {
            return Err(Error::InvalidInput(format!("split lists unknown cascade {missing:?}")));
        }
        Ok(Self {
            cascades,
            manifest,
            index,
        })
    }

    pub fn subset(&self, ids: &[String]) -> Vec<&Cascade> {
        ids.iter().map(|id| &self.cascades[self.index[id]]).collect()
    }

    pub fn train(&self) -> Vec<&Cascade> {
        self.subset(&self.manifest.train_ids)
    }

    pub fn valid(&self) -> Vec<&Cascade> {
        self.subset(&self.manifest.valid_ids)
    }

    pub fn test(&self) -> Vec<&Cascade> {
        self.subset(&self.manifest.test_ids)
    }
}

/// Labeled examples of one task in each split. The label budget applies to
/// the training examples that survive filtering.
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Training examples available before the label budget.
    pub train_available: usize,
}

fn label_all(cascades: &[&Cascade], spec: &TaskSpec, unit_seconds: u64) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for c in cascades {
        if let Some(e) = compute_label(c, spec, unit_seconds)?.into_example() {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn task_data(cfg: &ExperimentConfig, corpus: &Corpus, task: TaskId, label_fraction: f64) -> Result<TaskData> {
    let spec = cfg.task_spec(task)?;
    let unit = cfg.data.unit_seconds;
    let all_train = label_all(&corpus.train(), &spec, unit)?;
    let train_available = all_train.len();
    if train_available == 0 {
        return Err(Error::InvalidInput(format!(
            "task {task}: no training cascade reaches {} observed events",
            spec.min_observed
        )));
    }
    let ids: Vec<String> = all_train.iter().map(|e| e.cascade_id.clone()).collect();
    let keep = label_budget_ids(&ids, label_fraction, seeds::derive(cfg.train.finetune.seed, "label_budget", 0))?;
    let mut keep = keep.into_iter().peekable();
    let train = all_train
        .into_iter()
        .filter(|e| {
            // both lists are in split order
            if keep.peek() == Some(&e.cascade_id) {
                keep.next();
                true
            } else {
                false
            }
        })
        .collect();
    Ok(TaskData {
        train,
        valid: label_all(&corpus.valid(), &spec, unit)?,
        test: label_all(&corpus.test(), &spec, unit)?,
        spec,
        train_available,
    })
}

/// Elapse-inference pre-training on the train split, validated on the
/// valid split.
pub fn pretrain_model(cfg: &ExperimentConfig, corpus: &Corpus, sampling: PairSampling) -> Result<(TrainReport, ModelParams)> {
    let train_cfg = TrainConfig {
        mode: TrainMode::Pretrain,
        ..cfg.train.pretrain.clone()
    };
    pretrain(
        &corpus.train(),
        &corpus.valid(),
        &cfg.data.dynamics(),
        &cfg.tei,
        &cfg.model,
        &train_cfg,
        sampling,
    )
}

pub struct FinetuneOutcome {
    pub regime: Regime,
    pub report: TrainReport,
    pub params: ModelParams,
    pub valid: EvalResult,
    pub test: EvalResult,
    pub test_predictions: Vec<Prediction>,
}

pub fn finetune_task(cfg: &ExperimentConfig, data: &TaskData, init: Init<'_>, frozen: bool) -> Result<FinetuneOutcome> {
    let regime = Regime::new(matches!(init, Init::Pretrained(_)), frozen);
    let train_cfg = TrainConfig {
        mode: if frozen {
            TrainMode::FinetuneFreeze
        } else {
            TrainMode::FinetuneFull
        },
        ..cfg.train.finetune.clone()
    };
    let (report, params) = finetune(init, &cfg.model, &data.spec, &data.train, &data.valid, &train_cfg, frozen)?;
    let unit = cfg.data.unit_seconds;
    let seed = train_cfg.seed;
    let (valid, _) = evaluate(&params, &data.spec, unit, &data.valid, regime.as_str(), seed)?;
    if data.test.is_empty() {
        return Err(Error::InvalidInput(format!("task {}: empty test split after filtering", data.spec.name)));
    }
    let (test, test_predictions) = evaluate(&params, &data.spec, unit, &data.test, regime.as_str(), seed)?;
    Ok(FinetuneOutcome {
        regime,
        report,
        params,
        valid,
        test,
        test_predictions,
    })
}

/// Pretexts compared by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationPretext {
    #[serde(rename = "TEI")]
    Tei,
    #[serde(rename = "TEI-random-sampling")]
    RandomSampling,
    #[serde(rename = "T1-supervised")]
    SupervisedT1,
}

impl AblationPretext {
    pub const ALL: [AblationPretext; 3] = [
        AblationPretext::Tei,
        AblationPretext::RandomSampling,
        AblationPretext::SupervisedT1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationPretext::Tei => "TEI",
            AblationPretext::RandomSampling => "TEI-random-sampling",
            AblationPretext::SupervisedT1 => "T1-supervised",
        }
    }
}

/// Pre-trains an encoder with `pretext`. The supervised pretext trains the
/// whole model on T1 with every available training label.
pub fn ablation_pretrain(cfg: &ExperimentConfig, corpus: &Corpus, pretext: AblationPretext) -> Result<(TrainReport, ModelParams)> {
    match pretext {
        AblationPretext::Tei => pretrain_model(cfg, corpus, PairSampling::Tei),
        AblationPretext::RandomSampling => pretrain_model(cfg, corpus, PairSampling::UniformPairs),
        AblationPretext::SupervisedT1 => {
            let data = task_data(cfg, corpus, TaskId::T1, 1.0)?;
            let mut model = cfg.model.clone();
            model.seed = seeds::derive(cfg.model.seed, "ablation.t1", 0);
            let train_cfg = TrainConfig {
                mode: TrainMode::FinetuneFull,
                ..cfg.train.pretrain.clone()
            };
            let (mut report, params) =
                finetune(Init::Random, &model, &data.spec, &data.train, &data.valid, &train_cfg, false)?;
            report.label = "pretrain-t1-supervised".into();
            Ok((report, params))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pretext: AblationPretext,
    pub task: TaskId,
    pub seed: u64,
    pub valid_loss: f64,
    pub valid: EvalResult,
    pub test: EvalResult,
}

/// Fine-tunes each pre-trained encoder on every configured task, once per
/// run seed. The seed changes the label budget draw, head initialisation
/// and batch order.
pub fn ablation_rows(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    encoders: &[(AblationPretext, &ModelParams)],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.tasks.seeds {
        let run = cfg.with_run_seed(seed);
        for &task in &cfg.tasks.tasks {
            let data = task_data(&run, corpus, task, cfg.tasks.label_fraction)?;
            for &(pretext, encoder) in encoders {
                let out = finetune_task(&run, &data, Init::Pretrained(encoder), cfg.tasks.freeze)?;
                rows.push(AblationRow {
                    pretext,
                    task,
                    seed,
                    valid_loss: out.report.best_val_loss,
                    valid: out.valid,
                    test: out.test,
                });
            }
        }
    }
    Ok(rows)
}

/// Pre-trains one encoder per pretext, then runs [`ablation_rows`].
pub fn run_ablation(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<AblationRow>> {
    let encoders = AblationPretext::ALL
        .iter()
        .map(|&p| Ok((p, ablation_pretrain(cfg, corpus, p)?.1)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(AblationPretext, &ModelParams)> = encoders.iter().map(|(p, m)| (*p, m)).collect();
    ablation_rows(cfg, corpus, &refs)
}

/// `pretext,task,seed,valid_loss` rows.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("pretext,task,seed,valid_loss\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.pretext.as_str(), r.task, r.seed, r.valid_loss).unwrap();
    }
    out
}

/// Median validation loss over seeds, one row per pretext and task.
pub fn ablation_summary(rows: &[AblationRow]) -> Vec<(AblationPretext, TaskId, f64)> {
    let mut tasks: Vec<TaskId> = rows.iter().map(|r| r.task).collect();
    tasks.sort();
    tasks.dedup();
    let mut out = Vec::new();
    for p in AblationPretext::ALL {
        for &t in &tasks {
            let losses: Vec<f64> = rows
                .iter()
                .filter(|r| r.pretext == p && r.task == t)
                .map(|r| r.valid_loss)
                .collect();
            if let Some(m) = median(&losses) {
                out.push((p, t, m));
            }
        }
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<20}  {:<4}  {:>12}\n", "Pretext", "Task", "Valid loss");
    for (p, t, m) in ablation_summary(rows) {
        writeln!(out, "{:<20}  {:<4}  {:>12.4}", p.as_str(), t.to_string(), m).unwrap();
    }
    out
}
