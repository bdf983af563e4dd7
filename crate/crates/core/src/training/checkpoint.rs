//! Self-describing JSON checkpoints. Tensors are stored as base64 of their
//! little-endian `f32` bytes so a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::{Dpen, ModelConfig};
use crate::nn::{Adam, AdamConfig, ParamKind, Params};

use super::{EpochMetrics, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamRecord {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, aligned with `tensors` (empty for buffers).
    pub m: Vec<String>,
    pub v: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    /// Scene width and height the predictions are scaled to.
    pub output_size: [f64; 2],
    pub facial_roi: BoundingBox,
    pub train: TrainConfig,
    /// Number of completed epochs.
    pub epochs_done: usize,
    pub metrics: Vec<EpochMetrics>,
    pub tensors: Vec<TensorRecord>,
    pub adam: AdamRecord,
}

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad tensor encoding: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "tensor byte length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    pub fn capture(
        net: &Dpen,
        adam: &Adam,
        facial_roi: BoundingBox,
        train: &TrainConfig,
        epochs_done: usize,
        metrics: &[EpochMetrics],
    ) -> Self {
        let params = net.params();
        let tensors = params
            .ids()
            .map(|id| TensorRecord {
                name: params.name(id).to_string(),
                shape: params.shape(id).to_vec(),
                kind: params.kind(id),
                data: encode_f32(params.get(id)),
            })
            .collect();
        let (w, h) = net.output_size();
        Self {
            version: CHECKPOINT_VERSION,
            model: net.config().clone(),
            output_size: [w, h],
            facial_roi,
            train: train.clone(),
            epochs_done,
            metrics: metrics.to_vec(),
            tensors,
            adam: AdamRecord {
                config: adam.config,
                step: adam.step,
                m: adam.m.iter().map(|v| encode_f32(v)).collect(),
                v: adam.v.iter().map(|v| encode_f32(v)).collect(),
            },
        }
    }

    /// Rebuilds the network with the stored weights and buffers.
    pub fn restore_model(&self) -> Result<Dpen> {
        let mut net = Dpen::new(self.model.clone(), (self.output_size[0], self.output_size[1]), 0)?;
        let params = net.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for t in &self.tensors {
            let id = params
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {:?}", t.name)))?;
            if params.kind(id) != t.kind {
                return Err(Error::Checkpoint(format!("tensor {:?} has the wrong kind", t.name)));
            }
            params.assign(&t.name, &t.shape, decode_f32(&t.data)?)?;
        }
        Ok(net)
    }

    pub fn restore_adam(&self, params: &Params) -> Result<Adam> {
        let mut adam = Adam::new(self.adam.config, params);
        if self.adam.m.len() != adam.m.len() || self.adam.v.len() != adam.v.len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        adam.step = self.adam.step;
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            let (m, v) = (decode_f32(m)?, decode_f32(v)?);
            if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
                return Err(Error::Checkpoint(format!("optimizer moment {i} has the wrong length")));
            }
            adam.m[i] = m;
            adam.v[i] = v;
        }
        Ok(adam)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.model.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_encoding_round_trips_bits(bits in proptest::collection::vec(any::<u32>(), 0..64)) {
            let values: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let back = decode_f32(&encode_f32(&values)).unwrap();
            prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
        }
    }

    #[test]
    fn rejects_truncated_tensor() {
        assert!(decode_f32(&STANDARD.encode([1u8, 2, 3])).is_err());
        assert!(decode_f32("***").is_err());
    }
}
