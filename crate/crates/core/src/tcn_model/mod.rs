//! Dilated causal convolution encoder, prediction heads, exact reverse-mode
//! gradients, Adam and the checkpoint format.

pub mod checkpoint;
mod config;
pub mod encoder;
pub mod heads;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use encoder::{EncoderPlan, EncoderTrace, Mode};
pub use heads::{predict_downstream, predict_elapse, softplus, sigmoid};
pub use optim::Adam;
pub use params::{Gradients, MlpIndex, ModelParams, ParamLayout, Tensor};
