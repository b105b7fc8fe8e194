//! Pre-training a temporal convolutional encoder on unlabeled retweet cascades
//! with a temporal-elapse-inference pretext task, then transferring it to
//! downstream popularity-prediction settings.
//!
//! The crate is organised bottom-up:
//!
//! - [`cascade_data`]: cascades, the JSON-Lines format, splits and labels.
//! - [`synthetic`]: a seeded self-exciting cascade generator.
//! - [`dynamics`]: per-time-unit popularity dynamics and time slices.
//! - [`tei_sampler`]: temporal context sampling for the pretext task.
//! - [`tcn_model`]: dilated causal convolution encoder, heads, gradients,
//!   Adam and checkpoints.
//! - [`training`]: pretext pre-training and downstream fine-tuning.
//! - [`evaluation`]: MRSE, R-Acc, C-Acc, F1 and result tables.
//! - [`experiment`]: the configuration file and end-to-end pipelines driven
//!   by the `prep` binary.

pub mod cascade_data;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod seeds;
pub mod synthetic;
pub mod tcn_model;
pub mod tei_sampler;
pub mod training;

pub use cascade_data::{Cascade, Horizon, LabelKind, LabeledExample, SplitManifest, TaskId, TaskSpec};
pub use dynamics::{DynamicsConfig, PopularityDynamics, Slice};
pub use error::{Error, Result};
pub use evaluation::EvalResult;
pub use experiment::ExperimentConfig;
pub use synthetic::GenConfig;
pub use tcn_model::{ModelConfig, ModelParams};
pub use tei_sampler::{TeiConfig, TeiPair};
pub use training::{Regime, TrainConfig, TrainMode, TrainReport};
