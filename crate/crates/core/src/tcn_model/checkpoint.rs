//! Checkpoint files: one JSON header line (format, version, model config,
//! name/shape table) followed by every parameter as a little-endian `f64`,
//! tensors in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{shape_table, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "prep-tcn-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: params.config().clone(),
        tensors: params
            .tensors()
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(params.num_scalars() * 8);
    for t in params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptHeader("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::CorruptHeader(format!("unknown format {:?}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    header.config.validate().map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    let (expected, _) = shape_table(&header.config);
    let names_match = expected.len() == header.tensors.len()
        && expected.iter().zip(&header.tensors).all(|((n, _), e)| *n == e.name);
    if !names_match {
        return Err(Error::ConfigMismatch(format!(
            "config implies {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *shape != entry.shape {
            return Err(Error::ShapeMismatch(format!(
                "{name}: config implies {shape:?}, header lists {:?}",
                entry.shape
            )));
        }
    }
    let payload = &bytes[newline + 1..];
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() < total * 8 {
        return Err(Error::TruncatedPayload {
            expected: total * 8,
            found: payload.len(),
        });
    }
    if payload.len() > total * 8 {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {} bytes beyond the shape table",
            payload.len() - total * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = expected
        .into_iter()
        .map(|(name, shape)| {
            let len = shape.iter().product();
            Tensor {
                name,
                shape,
                data: values.by_ref().take(len).collect(),
            }
        })
        .collect();
    ModelParams::from_parts(header.config, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

impl ModelParams {
    /// Fails unless the checkpoint architecture equals `expected`.
    pub fn ensure_architecture(&self, expected: &ModelConfig) -> Result<()> {
        if self.config().same_architecture(expected) {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, run expects {:?}",
                self.config(),
                expected
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        ModelParams::init(&ModelConfig {
            layers_l: 2,
            hidden_channels: 2,
            mlp_hidden: 3,
            kernel_k: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = small();
        save_checkpoint(&p, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, p);
        assert_eq!(to_bytes(&loaded), fs::read(&path).unwrap());
    }

    #[test]
    fn edited_layer_count_is_config_mismatch() {
        let bytes = to_bytes(&small());
        let text = String::from_utf8_lossy(&bytes).replace("\"layers_l\":2", "\"layers_l\":3");
        let err = from_bytes(text.as_bytes());
        // lossy decoding may corrupt the payload, but the header is checked first
        assert!(matches!(err, Err(Error::ConfigMismatch(_))), "{err:?}");
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let bytes = to_bytes(&small());
        assert!(matches!(from_bytes(b"no newline"), Err(Error::CorruptHeader(_))));
        assert!(matches!(from_bytes(b"{bad json}\n"), Err(Error::CorruptHeader(_))));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(from_bytes(truncated), Err(Error::TruncatedPayload { .. })));
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..nl]).unwrap();
        let v2 = header.replace("\"version\":1", "\"version\":2");
        let mut edited = v2.into_bytes();
        edited.extend_from_slice(&bytes[nl..]);
        assert!(matches!(
            from_bytes(&edited),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let reshaped = header.replace("\"shape\":[2,1,2]", "\"shape\":[1,2,2]");
        assert_ne!(reshaped, header);
        let mut edited = reshaped.into_bytes();
        edited.extend_from_slice(&bytes[nl..]);
        assert!(matches!(from_bytes(&edited), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn hand_built_little_endian_fixture() {
        let cfg = ModelConfig {
            layers_l: 1,
            hidden_channels: 1,
            mlp_hidden: 1,
            kernel_k: 1,
            ..ModelConfig::default()
        };
        let (table, _) = shape_table(&cfg);
        // 1 conv weight, 1 conv bias, 4 pretext values... with one channel
        // there is no downsample projection
        let n: usize = table.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let header = format!(
            "{{\"format\":\"prep-tcn-checkpoint\",\"version\":1,\"config\":{},\"tensors\":[{}]}}\n",
            serde_json::to_string(&cfg).unwrap(),
            table
                .iter()
                .map(|(name, shape)| format!("{{\"name\":\"{name}\",\"shape\":{shape:?}}}").replace(' ', ""))
                .collect::<Vec<_>>()
                .join(",")
        );
        let mut bytes = header.into_bytes();
        for i in 0..n {
            // 0.5 * i written explicitly in little-endian order
            let bits = (0.5 * i as f64).to_bits();
            bytes.extend((0..8).map(|b| ((bits >> (8 * b)) & 0xff) as u8));
        }
        let p = from_bytes(&bytes).unwrap();
        let flat: Vec<f64> = p.tensors().iter().flat_map(|t| t.data.clone()).collect();
        assert_eq!(flat, (0..n).map(|i| 0.5 * i as f64).collect::<Vec<_>>());
        assert_eq!(to_bytes(&p), bytes);
    }
}
