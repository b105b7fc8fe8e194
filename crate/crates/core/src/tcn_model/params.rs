use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::seeds;

/// Number of input channels: the log-scaled increment series.
pub const INPUT_CHANNELS: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; len],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpIndex {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl MlpIndex {
    pub fn tensors(&self) -> [usize; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Positions of each named tensor in [`ModelParams::tensors`]. Encoder
/// tensors come first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv_w: Vec<usize>,
    pub conv_b: Vec<usize>,
    pub downsample: Option<(usize, usize)>,
    pub pretext: MlpIndex,
    pub downstream: MlpIndex,
    pub encoder_len: usize,
}

impl ParamLayout {
    pub fn is_encoder(&self, index: usize) -> bool {
        index < self.encoder_len
    }
}

/// Name/shape table implied by a config, in storage order.
pub fn shape_table(cfg: &ModelConfig) -> (Vec<(String, Vec<usize>)>, ParamLayout) {
    let c = cfg.hidden_channels;
    let k = cfg.kernel_k;
    let h = cfg.mlp_hidden;
    let mut table = Vec::new();
    fn add(table: &mut Vec<(String, Vec<usize>)>, name: String, shape: Vec<usize>) -> usize {
        table.push((name, shape));
        table.len() - 1
    }
    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    let mut downsample = None;
    for l in 0..cfg.layers_l {
        let cin = if l == 0 { INPUT_CHANNELS } else { c };
        conv_w.push(add(&mut table, format!("tcn.{l}.conv.weight"), vec![c, cin, k]));
        conv_b.push(add(&mut table, format!("tcn.{l}.conv.bias"), vec![c]));
        if l == 0 && cin != c {
            let w = add(&mut table, "tcn.0.downsample.weight".into(), vec![c, cin, 1]);
            let b = add(&mut table, "tcn.0.downsample.bias".into(), vec![c]);
            downsample = Some((w, b));
        }
    }
    let encoder_len = table.len();
    let mut mlp = |prefix: &str, input: usize| MlpIndex {
        w1: add(&mut table, format!("{prefix}.fc1.weight"), vec![h, input]),
        b1: add(&mut table, format!("{prefix}.fc1.bias"), vec![h]),
        w2: add(&mut table, format!("{prefix}.fc2.weight"), vec![1, h]),
        b2: add(&mut table, format!("{prefix}.fc2.bias"), vec![1]),
    };
    let pretext = mlp("pretext", 2 * c);
    let downstream = mlp("downstream", c);
    (
        table,
        ParamLayout {
            conv_w,
            conv_b,
            downsample,
            pretext,
            downstream,
            encoder_len,
        },
    )
}

/// All encoder and head parameters, in a fixed named order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (table, layout) = shape_table(config);
        let tensors = table
            .into_iter()
            .map(|(name, shape)| Tensor::zeros(name, shape))
            .collect();
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    /// Kaiming-uniform weights (bound `1/sqrt(fan_in)`), zero biases, one
    /// seeded stream per tensor.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let all: Vec<usize> = (0..p.tensors.len()).collect();
        p.reinit(&all, config.seed);
        Ok(p)
    }

    /// Re-draws the given tensors from `seed` with the initialisation rule.
    pub fn reinit(&mut self, indices: &[usize], seed: u64) {
        for &i in indices {
            let t = &mut self.tensors[i];
            if t.name.ends_with(".bias") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = seeds::rng(seed, &t.name, 0);
            for v in &mut t.data {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub(crate) fn from_parts(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = Self::zeros(&config)?;
        if expected.tensors.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.tensors.iter().zip(&tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "expected {} {:?}, found {} {:?}",
                    e.name, e.shape, t.name, t.shape
                )));
            }
        }
        Ok(Self {
            config,
            layout: expected.layout,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn data(&self, index: usize) -> &[f64] {
        &self.tensors[index].data
    }

    pub fn encoder_indices(&self) -> std::ops::Range<usize> {
        0..self.layout.encoder_len
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Copies every encoder tensor from `other`, which must share the
    /// architecture.
    pub fn copy_encoder_from(&mut self, other: &ModelParams) -> Result<()> {
        if !self.config.same_architecture(&other.config) {
            return Err(Error::ConfigMismatch(
                "encoder architectures differ".into(),
            ));
        }
        for i in self.encoder_indices() {
            self.tensors[i].data.copy_from_slice(&other.tensors[i].data);
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: t.name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ModelParams`] tensor list.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn norm(&self, index: usize) -> f64 {
        self.tensors[index].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Fails naming the first tensor holding NaN or infinity.
    pub fn check_finite(&self, params: &ModelParams) -> Result<()> {
        for (g, t) in self.tensors.iter().zip(&params.tensors) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: t.name.clone(),
                });
            }
        }
        Ok(())
    }
}
